#pragma once

// Per-example visual features: a global vector, optional region vectors and an
// optional G x G grid of cell vectors; the binary feature file; the fusion
// verb scorer and the additive soft attention over grid cells.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "situ/error.hpp"
#include "situ/rnn.hpp"

namespace situ::features {

using numeric::Graph;
using numeric::ParameterStore;
using numeric::Shape;
using numeric::Tensor;
using numeric::Var;

struct FeatureDims {
  std::uint32_t global = 0;
  std::uint32_t region = 0;
  std::uint32_t cell = 0;
  std::uint32_t grid = 0;  // G; cells = G * G
  bool operator==(const FeatureDims&) const = default;
  std::size_t cells() const { return std::size_t{grid} * grid; }
};

struct FeatureRecord {
  std::vector<float> global;
  std::vector<std::vector<float>> regions;
  std::optional<std::vector<float>> grid;  // cell-major, cells() * cell floats
  bool operator==(const FeatureRecord&) const = default;
};

inline void validate(const FeatureDims& dims, const FeatureRecord& rec) {
  auto finite = [](std::span<const float> v) {
    for (float x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  if (rec.global.size() != dims.global || !finite(rec.global))
    throw ValidationError("feature record: global vector must have " + std::to_string(dims.global) + " finite values");
  for (const auto& r : rec.regions)
    if (r.size() != dims.region || !finite(r))
      throw ValidationError("feature record: region vectors must have " + std::to_string(dims.region) + " finite values");
  if (rec.grid) {
    if (dims.grid < 1) throw ValidationError("feature record: grid present but G < 1");
    if (rec.grid->size() != dims.cells() * dims.cell || !finite(*rec.grid))
      throw ValidationError("feature record: grid size mismatch");
  }
}

struct FeatureSet {
  FeatureDims dims;
  std::vector<FeatureRecord> records;
  bool operator==(const FeatureSet&) const = default;
};

/// Raised when the feature file ends inside record `index`.
struct TruncatedFeatures : ValidationError {
  TruncatedFeatures(std::size_t index, const std::string& what) : ValidationError(what), index(index) {}
  std::size_t index;
};

inline constexpr char kMagic[4] = {'S', 'I', 'T', 'F'};
inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_floats(std::string& out, std::span<const float> xs) {
  for (float x : xs) put_u32(out, std::bit_cast<std::uint32_t>(x));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  bool u32(std::uint32_t& v) {
    if (pos_ + 4 > bytes_.size()) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return true;
  }
  bool u8(std::uint8_t& v) {
    if (pos_ >= bytes_.size()) return false;
    v = static_cast<unsigned char>(bytes_[pos_++]);
    return true;
  }
  bool floats(std::vector<float>& out, std::size_t n) {
    if (pos_ + 4 * n > bytes_.size()) return false;
    out.resize(n);
    std::uint32_t bits;
    for (auto& x : out) {
      u32(bits);
      x = std::bit_cast<float>(bits);
    }
    return true;
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Little-endian: "SITF", version, count, Dg, Dr, Dc, G (u32); then per
/// record the global floats, u32 region count + region floats, u8 grid flag
/// + grid floats.
inline std::string encode_features(const FeatureSet& set) {
  std::string out(kMagic, 4);
  detail::put_u32(out, kFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(set.records.size()));
  detail::put_u32(out, set.dims.global);
  detail::put_u32(out, set.dims.region);
  detail::put_u32(out, set.dims.cell);
  detail::put_u32(out, set.dims.grid);
  for (const auto& rec : set.records) {
    validate(set.dims, rec);
    detail::put_floats(out, rec.global);
    detail::put_u32(out, static_cast<std::uint32_t>(rec.regions.size()));
    for (const auto& r : rec.regions) detail::put_floats(out, r);
    out.push_back(rec.grid ? 1 : 0);
    if (rec.grid) detail::put_floats(out, *rec.grid);
  }
  return out;
}

inline FeatureSet decode_features(std::string bytes) {
  detail::Reader in(std::move(bytes));
  FeatureSet set;
  char magic[4];
  std::uint32_t version = 0, count = 0;
  for (auto& ch : magic) {
    std::uint8_t b;
    if (!in.u8(b)) throw ValidationError("features: truncated header");
    ch = static_cast<char>(b);
  }
  if (std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("features: bad magic");
  if (!in.u32(version) || !in.u32(count) || !in.u32(set.dims.global) || !in.u32(set.dims.region) ||
      !in.u32(set.dims.cell) || !in.u32(set.dims.grid))
    throw ValidationError("features: truncated header");
  if (version != kFormatVersion) throw ValidationError("features: unsupported version " + std::to_string(version));
  set.records.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    auto truncated = [k] { return TruncatedFeatures(k, "features: file truncated inside record " + std::to_string(k)); };
    FeatureRecord rec;
    std::uint32_t regions = 0;
    std::uint8_t has_grid = 0;
    if (!in.floats(rec.global, set.dims.global) || !in.u32(regions)) throw truncated();
    rec.regions.resize(regions);
    for (auto& r : rec.regions)
      if (!in.floats(r, set.dims.region)) throw truncated();
    if (!in.u8(has_grid)) throw truncated();
    if (has_grid > 1) throw ValidationError("features: bad grid flag in record " + std::to_string(k));
    if (has_grid) {
      rec.grid.emplace();
      if (!in.floats(*rec.grid, set.dims.cells() * set.dims.cell)) throw truncated();
    }
    validate(set.dims, rec);
    set.records.push_back(std::move(rec));
  }
  if (!in.exhausted()) throw ValidationError("features: trailing bytes after last record");
  return set;
}

inline void write_features(const std::string& path, const FeatureSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  auto bytes = encode_features(set);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline FeatureSet read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_features(std::move(bytes));
}

template <class Real>
Tensor<Real> to_tensor(std::span<const float> v) {
  return Tensor<Real>::vector(std::vector<Real>(v.begin(), v.end()));
}

template <class Real>
Tensor<Real> grid_tensor(const FeatureDims& dims, const FeatureRecord& rec) {
  if (!rec.grid) throw ValidationError("attention requires grid features");
  return Tensor<Real>::matrix(dims.cells(), dims.cell, std::vector<Real>(rec.grid->begin(), rec.grid->end()));
}

/// Two parameter-disjoint paths producing verb logits: one scores each
/// region concatenated with the global vector, the other the global vector
/// alone.
struct FusionParams {
  rnn::Affine box_path;
  rnn::Affine global_path;

  template <class Real, class Rng>
  static FusionParams create(ParameterStore<Real>& store, const std::string& name, const FeatureDims& dims,
                             std::size_t verbs, const std::string& group, Rng& rng) {
    return {rnn::Affine::create(store, name + ".box", dims.region + dims.global, verbs, group, rng),
            rnn::Affine::create(store, name + ".global", dims.global, verbs, group, rng)};
  }
};

/// Falls back to the global path when no region is present; otherwise the
/// elementwise max over per-region box-path logits.
template <class Real>
Var<Real> fusion_verb_logits(Graph<Real>& g, const FusionParams& p, const FeatureRecord& rec) {
  auto global = g.constant(to_tensor<Real>(rec.global));
  if (rec.regions.empty()) return p.global_path(g, global);
  std::vector<Var<Real>> per_region;
  per_region.reserve(rec.regions.size());
  for (const auto& r : rec.regions) {
    if (r.size() + rec.global.size() != p.box_path.in) throw NumericError("fusion: region dimension mismatch");
    per_region.push_back(p.box_path(g, numeric::concat<Real>({g.constant(to_tensor<Real>(r)), global})));
  }
  return numeric::max_pool(per_region);
}

/// score_ij = u . tanh(W_h h + W_a a_ij + b), softmax over all cells.
struct AttentionParams {
  std::size_t hidden_weight = 0;  // [A x H]
  std::size_t cell_weight = 0;    // [A x Dc]
  std::size_t bias = 0;           // [A]
  std::size_t score = 0;          // [A]
  std::size_t hidden = 0;
  std::size_t cell = 0;
  std::size_t width = 0;

  template <class Real, class Rng>
  static AttentionParams create(ParameterStore<Real>& store, const std::string& name, std::size_t hidden,
                                std::size_t cell, std::size_t width, const std::string& group, Rng& rng) {
    AttentionParams a{store.create(name + ".hidden_weight", group, {width, hidden}),
                      store.create(name + ".cell_weight", group, {width, cell}),
                      store.create(name + ".bias", group, {width}),
                      store.create(name + ".score", group, {width}),
                      hidden,
                      cell,
                      width};
    rnn::init_uniform(store[a.hidden_weight], rng);
    rnn::init_uniform(store[a.cell_weight], rng);
    rnn::init_uniform(store[a.score], rng);
    return a;
  }
};

/// Hidden-independent part of the scores, computed once per example.
template <class Real>
struct AttentionKeys {
  Var<Real> cells;      // [cells x Dc]
  Var<Real> projected;  // [cells x A]
};

template <class Real>
struct AttentionResult {
  Var<Real> context;  // [Dc]
  Var<Real> weights;  // [cells]
};

template <class Real>
AttentionKeys<Real> attention_keys(Graph<Real>& g, const AttentionParams& p, Var<Real> cells) {
  if (cells.value().rank() != 2 || cells.value().cols() != p.cell) throw NumericError("attention: grid shape mismatch");
  return {cells, numeric::matmul(cells, numeric::transpose(g.param(p.cell_weight)))};
}

template <class Real>
AttentionResult<Real> attention_context(Graph<Real>& g, const AttentionParams& p, const AttentionKeys<Real>& keys,
                                        Var<Real> h) {
  using namespace numeric;
  auto query = add(matmul(g.param(p.hidden_weight), h), g.param(p.bias));
  auto scores = matmul(numeric::tanh(add(keys.projected, query)), g.param(p.score));
  auto weights = softmax(scores);
  auto context = matmul(transpose(keys.cells), weights);
  return {context, weights};
}

template <class Real>
AttentionResult<Real> attention_context(Graph<Real>& g, const AttentionParams& p, Var<Real> h, Var<Real> cells) {
  return attention_context(g, p, attention_keys(g, p, cells), h);
}

}  // namespace situ::features
