// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "ciffuse/errors.hpp"
#include "ciffuse/text_io.hpp"

namespace ciffuse::checkpoint {

Checkpoint capture(const std::vector<std::pair<std::string, std::string>>& config,
                   std::uint64_t step, std::string phase, const nn::ParamStore& store,
                   const optim::AdamState* adam) {
  Checkpoint ck;
  ck.config = config;
  ck.step = step;
  ck.phase = std::move(phase);
  for (const Parameter* p : store.all()) ck.params.push_back({p->name, p->shape, p->value});
  if (adam && !adam->m.empty()) {
    ck.adam_step = adam->step;
    for (std::size_t k = 0; k < adam->m.size(); ++k) ck.moments.emplace_back(adam->m[k], adam->v[k]);
  }
  return ck;
}

namespace {

void write_values(std::ostream& os, const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << text::format_double(v[i]);
  os << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::vector<std::string_view> tokens(const std::string& what) {
    if (!std::getline(is_, line_)) fail("truncated checkpoint: expected " + what);
    ++no_;
    return text::split_ws(line_);
  }
  std::string raw(const std::string& what) {
    if (!std::getline(is_, line_)) fail("truncated checkpoint: expected " + what);
    ++no_;
    return line_;
  }
  std::uint64_t uint(std::string_view s) {
    auto v = text::parse_uint(s);
    if (!v) fail("expected an integer, got '" + std::string(s) + "'");
    return *v;
  }
  std::vector<double> values(std::size_t n, const std::string& what) {
    auto tok = tokens(what);
    if (tok.size() != n)
      fail(what + ": expected " + std::to_string(n) + " values, got " + std::to_string(tok.size()));
    std::vector<double> out;
    out.reserve(n);
    for (auto s : tok) {
      auto x = text::parse_double(s);
      if (!x) fail(what + ": bad number '" + std::string(s) + "'");
      out.push_back(*x);
    }
    return out;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("checkpoint line " + std::to_string(no_) + ": " + msg);
  }

 private:
  std::istream& is_;
  std::string line_;
  std::size_t no_ = 0;
};

}  // namespace

void write(std::ostream& os, const Checkpoint& ck) {
  os << "cif-fuse-ckpt v1\n";
  os << "config " << ck.config.size() << '\n';
  for (const auto& [k, v] : ck.config) os << k << " = " << v << '\n';
  os << "state step " << ck.step << " phase " << ck.phase << " adam_step " << ck.adam_step << '\n';
  os << "params " << ck.params.size() << '\n';
  for (const auto& r : ck.params) {
    os << "param " << r.name << ' ' << r.shape.size();
    for (auto e : r.shape) os << ' ' << e;
    os << '\n';
    write_values(os, r.values);
  }
  os << "adam " << ck.moments.size() << '\n';
  for (std::size_t k = 0; k < ck.moments.size(); ++k) {
    os << "moments " << ck.params[k].name << '\n';
    write_values(os, ck.moments[k].first);
    write_values(os, ck.moments[k].second);
  }
  os << "end\n";
}

Checkpoint read(std::istream& is) {
  Reader in(is);
  Checkpoint ck;
  auto head = in.tokens("header");
  if (head.size() != 2 || head[0] != "cif-fuse-ckpt") in.fail("not a checkpoint file");
  if (head[1] != "v1") in.fail("unsupported checkpoint version " + std::string(head[1]));

  auto cfg = in.tokens("config count");
  if (cfg.size() != 2 || cfg[0] != "config") in.fail("expected 'config <n>'");
  const auto n_cfg = in.uint(cfg[1]);
  for (std::uint64_t i = 0; i < n_cfg; ++i) {
    std::string line = in.raw("config entry");
    const auto eq = line.find('=');
    if (eq == std::string::npos) in.fail("expected 'key = value'");
    ck.config.emplace_back(std::string(text::trim(std::string_view(line).substr(0, eq))),
                           std::string(text::trim(std::string_view(line).substr(eq + 1))));
  }

  auto st = in.tokens("state");
  if (st.size() != 7 || st[0] != "state" || st[1] != "step" || st[3] != "phase" ||
      st[5] != "adam_step")
    in.fail("expected 'state step <s> phase <p> adam_step <k>'");
  ck.step = in.uint(st[2]);
  ck.phase = std::string(st[4]);
  ck.adam_step = in.uint(st[6]);

  auto ph = in.tokens("params count");
  if (ph.size() != 2 || ph[0] != "params") in.fail("expected 'params <n>'");
  const auto n_params = in.uint(ph[1]);
  for (std::uint64_t i = 0; i < n_params; ++i) {
    auto pt = in.tokens("param header");
    if (pt.size() < 3 || pt[0] != "param") in.fail("expected 'param <name> <rank> <dims...>'");
    Record r;
    r.name = std::string(pt[1]);
    const auto rank = in.uint(pt[2]);
    if (pt.size() != 3 + rank) in.fail("param " + r.name + ": rank/dims mismatch");
    for (std::uint64_t d = 0; d < rank; ++d) r.shape.push_back(in.uint(pt[3 + d]));
    r.values = in.values(numel(r.shape), "param " + r.name);
    ck.params.push_back(std::move(r));
  }

  auto ah = in.tokens("adam count");
  if (ah.size() != 2 || ah[0] != "adam") in.fail("expected 'adam <n>'");
  const auto n_adam = in.uint(ah[1]);
  if (n_adam != 0 && n_adam != ck.params.size()) in.fail("adam moment count mismatch");
  for (std::uint64_t i = 0; i < n_adam; ++i) {
    auto mh = in.tokens("moments header");
    if (mh.size() != 2 || mh[0] != "moments" || mh[1] != ck.params[i].name)
      in.fail("expected 'moments " + ck.params[i].name + "'");
    const std::size_t n = ck.params[i].values.size();
    auto m = in.values(n, "first moments of " + ck.params[i].name);
    auto v = in.values(n, "second moments of " + ck.params[i].name);
    ck.moments.emplace_back(std::move(m), std::move(v));
  }
  auto end = in.tokens("end marker");
  if (end.size() != 1 || end[0] != "end") in.fail("expected 'end'");
  return ck;
}

void save(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    write(os, ck);
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read(is);
}

void restore_params(const Checkpoint& ck, nn::ParamStore& store, bool partial) {
  std::size_t matched = 0;
  for (const auto& r : ck.params) {
    Parameter* p = store.find(r.name);
    if (!p) {
      if (partial) continue;
      throw ConfigError("checkpoint parameter " + r.name + " not in model");
    }
    if (p->shape != r.shape)
      throw ConfigError("checkpoint parameter " + r.name + " has shape " + shape_str(r.shape) +
                        ", model expects " + shape_str(p->shape));
    p->value = r.values;
    ++matched;
  }
  if (!partial && matched != store.all().size())
    throw ConfigError("checkpoint does not cover every model parameter");
}

optim::AdamState restore_adam(const Checkpoint& ck, const nn::ParamStore& store) {
  optim::AdamState st;
  if (ck.moments.empty()) return st;
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t k = 0; k < ck.params.size(); ++k) idx[ck.params[k].name] = k;
  for (const Parameter* p : store.all()) {
    auto it = idx.find(p->name);
    if (it == idx.end()) throw ConfigError("no optimizer state for " + p->name);
    st.m.push_back(ck.moments[it->second].first);
    st.v.push_back(ck.moments[it->second].second);
  }
  st.step = ck.adam_step;
  return st;
}

void fill_store(const Checkpoint& ck, nn::ParamStore& store) {
  for (const auto& r : ck.params) store.add(r.name, r.shape).value = r.values;
}

}  // namespace ciffuse::checkpoint
