// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/data.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ciffuse/errors.hpp"
#include "ciffuse/rng.hpp"
#include "ciffuse/text_io.hpp"

namespace ciffuse::data {

std::vector<std::vector<int>> Dataset::token_sequences() const {
  std::vector<std::vector<int>> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) out.push_back(u.tokens);
  return out;
}

void TaskSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("task: vocab_size must be >= 2");
  if (feature_dim < 1) throw ConfigError("task: feature_dim must be >= 1");
  if (repeat_min < 1 || repeat_max < repeat_min) throw ConfigError("task: bad repeat range");
  if (length_min < 1 || length_max < length_min) throw ConfigError("task: bad length range");
  if (!(noise >= 0.0)) throw ConfigError("task: noise must be >= 0");
  if (!(successor_prob >= 0.0 && successor_prob <= 1.0))
    throw ConfigError("task: successor_prob must lie in [0,1]");
  if (stride < 1) throw ConfigError("task: stride must be >= 1");
  if (2 * homophone_pairs > vocab_size) throw ConfigError("task: too many homophone pairs");
  if (repeat_min < stride)
    throw ConfigError("task: repeat_min must be >= stride so every token keeps a frame");
}

void TaskSpec::apply(const std::string& key, const std::string& value) {
  auto uint = [&](std::size_t& dst) {
    auto x = text::parse_uint(value);
    if (!x) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    dst = static_cast<std::size_t>(*x);
  };
  auto real = [&](double& dst) {
    auto x = text::parse_double(value);
    if (!x) throw ConfigError(key + ": expected a number, got '" + value + "'");
    dst = *x;
  };
  if (key == "vocab_size") uint(vocab_size);
  else if (key == "feature_dim") uint(feature_dim);
  else if (key == "repeat_min") uint(repeat_min);
  else if (key == "repeat_max") uint(repeat_max);
  else if (key == "noise") real(noise);
  else if (key == "length_min") uint(length_min);
  else if (key == "length_max") uint(length_max);
  else if (key == "successor_prob") real(successor_prob);
  else if (key == "stride") uint(stride);
  else if (key == "homophone_pairs") uint(homophone_pairs);
  else if (key == "seed") {
    auto x = text::parse_uint(value);
    if (!x) throw ConfigError("seed: expected a non-negative integer, got '" + value + "'");
    seed = *x;
  } else {
    throw ConfigError("unknown task key '" + key + "'");
  }
}

TaskSpec parse_task_spec(std::istream& is) {
  TaskSpec spec;
  text::read_key_values(is, [&](const std::string& k, const std::string& v) { spec.apply(k, v); });
  spec.validate();
  return spec;
}

TaskSpec load_task_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open task spec " + path.string());
  return parse_task_spec(is);
}

TaskWorld make_world(const TaskSpec& spec) {
  spec.validate();
  TaskWorld w;
  Rng rng = make_rng(spec.seed, {0x70726f74});
  std::normal_distribution<double> gauss(0.0, 1.0);
  w.prototypes.resize(spec.vocab_size * spec.feature_dim);
  for (auto& x : w.prototypes) x = gauss(rng);
  const std::size_t f = spec.feature_dim;
  for (std::size_t i = 0; i < spec.homophone_pairs; ++i)
    std::copy_n(w.prototypes.begin() + static_cast<long>(2 * i * f), f,
                w.prototypes.begin() + static_cast<long>((2 * i + 1) * f));
  // A single cycle through a shuffled order: no token is its own successor.
  std::vector<int> order(spec.vocab_size);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  w.successor.resize(spec.vocab_size);
  for (std::size_t i = 0; i < order.size(); ++i)
    w.successor[static_cast<std::size_t>(order[i])] = order[(i + 1) % order.size()];
  return w;
}

namespace {

Utterance make_utterance(const TaskSpec& spec, const TaskWorld& world, std::uint64_t sample_seed,
                         std::size_t index, const std::string& prefix) {
  Rng rng = make_rng(sample_seed, {index});
  const int v = static_cast<int>(spec.vocab_size);
  std::uniform_int_distribution<std::size_t> len_dist(spec.length_min, spec.length_max);
  std::uniform_int_distribution<std::size_t> rep_dist(spec.repeat_min, spec.repeat_max);
  std::uniform_int_distribution<int> tok_dist(0, v - 1);
  std::uniform_int_distribution<int> other_dist(0, v - 2);
  std::bernoulli_distribution follow(spec.successor_prob);
  std::normal_distribution<double> noise(0.0, 1.0);

  Utterance u;
  u.id = prefix + std::to_string(index);
  u.features = spec.feature_dim;
  const std::size_t n = len_dist(rng);
  u.tokens.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      u.tokens.push_back(tok_dist(rng));
      continue;
    }
    const int prev = u.tokens.back();
    if (follow(rng)) {
      u.tokens.push_back(world.successor[static_cast<std::size_t>(prev)]);
    } else {
      const int other = other_dist(rng);  // uniform over tokens != prev
      u.tokens.push_back(other >= prev ? other + 1 : other);
    }
  }
  for (int tok : u.tokens) {
    const std::size_t reps = rep_dist(rng);
    const double* proto = world.prototypes.data() + static_cast<std::size_t>(tok) * spec.feature_dim;
    for (std::size_t r = 0; r < reps; ++r)
      for (std::size_t f = 0; f < spec.feature_dim; ++f)
        u.feats.push_back(proto[f] + spec.noise * noise(rng));
    u.frames += reps;
  }
  return u;
}

}  // namespace

std::vector<Utterance> generate(const TaskSpec& spec, std::size_t count, std::uint64_t sample_seed,
                                const std::string& id_prefix) {
  if (count == 0) throw ConfigError("generate: count must be >= 1");
  const TaskWorld world = make_world(spec);
  std::vector<Utterance> out(count);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(count); ++i)
    out[static_cast<std::size_t>(i)] =
        make_utterance(spec, world, sample_seed, static_cast<std::size_t>(i), id_prefix);
  return out;
}

Dataset generate_dataset(const TaskSpec& spec, std::size_t count, std::uint64_t sample_seed,
                         const std::string& id_prefix) {
  Dataset ds;
  ds.vocab_size = spec.vocab_size;
  ds.feature_dim = spec.feature_dim;
  ds.utterances = generate(spec, count, sample_seed, id_prefix);
  return ds;
}

// ---------------------------------------------------------------------------
// Persistence

void write_dataset(std::ostream& os, const Dataset& ds) {
  os << "cif-fuse-data v1\n";
  os << "vocab " << ds.vocab_size << " features " << ds.feature_dim << " count "
     << ds.utterances.size() << '\n';
  for (const auto& u : ds.utterances) {
    os << "utt " << u.id << ' ' << u.frames << ' ' << u.features << ' ' << u.tokens.size() << '\n';
    for (std::size_t i = 0; i < u.tokens.size(); ++i) os << (i ? " " : "") << u.tokens[i];
    os << '\n';
    for (std::size_t t = 0; t < u.frames; ++t) {
      for (std::size_t f = 0; f < u.features; ++f)
        os << (f ? " " : "") << text::format_double(u.feats[t * u.features + f]);
      os << '\n';
    }
  }
}

namespace {

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}
  bool next(std::string& line) {
    if (!std::getline(is_, line)) return false;
    ++line_no_;
    return true;
  }
  std::size_t line_no() const { return line_no_; }

 private:
  std::istream& is_;
  std::size_t line_no_ = 0;
};

[[noreturn]] void fail(const std::string& where, std::size_t line, const std::string& what) {
  throw ParseError(where + " (line " + std::to_string(line) + "): " + what);
}

}  // namespace

Dataset read_dataset(std::istream& is) {
  LineReader in(is);
  std::string line;
  if (!in.next(line)) fail("header", 1, "empty file");
  {
    auto tok = text::split_ws(line);
    if (tok.size() != 2 || tok[0] != "cif-fuse-data") fail("header", 1, "not a dataset file");
    if (tok[1] != "v1") fail("header", 1, "unsupported version " + std::string(tok[1]));
  }
  Dataset ds;
  std::size_t count = 0;
  {
    if (!in.next(line)) fail("header", 2, "missing sizes line");
    auto tok = text::split_ws(line);
    auto v = tok.size() == 6 ? text::parse_uint(tok[1]) : std::nullopt;
    auto f = tok.size() == 6 ? text::parse_uint(tok[3]) : std::nullopt;
    auto c = tok.size() == 6 ? text::parse_uint(tok[5]) : std::nullopt;
    if (!v || !f || !c || tok[0] != "vocab" || tok[2] != "features" || tok[4] != "count")
      fail("header", in.line_no(), "expected 'vocab <V> features <F> count <N>'");
    ds.vocab_size = *v;
    ds.feature_dim = *f;
    count = *c;
  }
  ds.utterances.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const std::string rec = "record " + std::to_string(r);
    if (!in.next(line)) fail(rec, in.line_no() + 1, "truncated file: record header missing");
    auto head = text::split_ws(line);
    if (head.size() != 5 || head[0] != "utt") fail(rec, in.line_no(), "bad record header");
    Utterance u;
    u.id = std::string(head[1]);
    const std::string where = rec + " '" + u.id + "'";
    auto t = text::parse_uint(head[2]);
    auto f = text::parse_uint(head[3]);
    auto n = text::parse_uint(head[4]);
    if (!t || !f || !n) fail(where, in.line_no(), "bad sizes in record header");
    if (*f != ds.feature_dim) fail(where, in.line_no(), "feature dimension mismatch");
    u.frames = *t;
    u.features = *f;
    if (!in.next(line)) fail(where, in.line_no() + 1, "truncated file: token line missing");
    auto toks = text::split_ws(line);
    if (toks.size() != *n) fail(where, in.line_no(), "expected " + std::to_string(*n) + " tokens");
    for (auto s : toks) {
      auto id = text::parse_int(s);
      if (!id || *id < 0 || static_cast<std::size_t>(*id) >= ds.vocab_size)
        fail(where, in.line_no(), "bad token id '" + std::string(s) + "'");
      u.tokens.push_back(static_cast<int>(*id));
    }
    u.feats.reserve(u.frames * u.features);
    for (std::size_t i = 0; i < u.frames; ++i) {
      if (!in.next(line))
        fail(where, in.line_no() + 1,
             "truncated file: frame " + std::to_string(i) + " of " + std::to_string(u.frames));
      auto vals = text::split_ws(line);
      if (vals.size() != u.features)
        fail(where, in.line_no(), "frame " + std::to_string(i) + " has " +
                                      std::to_string(vals.size()) + " values");
      for (auto s : vals) {
        auto x = text::parse_double(s);
        if (!x) fail(where, in.line_no(), "bad number '" + std::string(s) + "'");
        u.feats.push_back(*x);
      }
    }
    ds.utterances.push_back(std::move(u));
  }
  while (in.next(line))
    if (!text::trim(line).empty()) fail("trailer", in.line_no(), "unexpected content after last record");
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_dataset(os, ds);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_dataset(is);
}

}  // namespace ciffuse::data
