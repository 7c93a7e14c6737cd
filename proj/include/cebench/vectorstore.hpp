#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cebench/corpus.hpp"
#include "cebench/hash.hpp"
#include "cebench/http_client.hpp"

namespace cebench {

// ---- Embedding providers ---------------------------------------------------

struct EmbeddingProviderDescriptor {
  enum class Kind { builtin, http };
  Kind kind = Kind::builtin;
  std::size_t dim = 256;  // builtin only; http dimension comes from the server
  std::string base_url;
  std::string model;
  double timeout_s = 120.0;
};

// Hashed bag-of-words: lowercase alphanumeric token runs, fnv1a64 bucket per
// token, L2-normalized counts. Text with no tokens hashes as one whole-text
// token so the norm is always 1.
inline std::vector<float> embed_builtin(std::string_view text,
                                        std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("embedding dim must be >= 1");
  std::vector<double> counts(dim, 0.0);
  std::string token;
  bool any = false;
  auto flush = [&]() {
    if (token.empty()) return;
    counts[fnv1a64(token) % dim] += 1.0;
    any = true;
    token.clear();
  };
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) token.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  if (!any) counts[fnv1a64(text) % dim] = 1.0;
  double norm = std::sqrt(
      std::inner_product(counts.begin(), counts.end(), counts.begin(), 0.0));
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    out[i] = static_cast<float>(counts[i] / norm);
  }
  return out;
}

inline std::vector<std::vector<float>> embed(
    const std::vector<std::string>& texts,
    const EmbeddingProviderDescriptor& provider) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  if (provider.kind == EmbeddingProviderDescriptor::Kind::builtin) {
    for (const auto& t : texts) out.push_back(embed_builtin(t, provider.dim));
    return out;
  }
  if (texts.empty()) return out;
  nlohmann::json body = {{"input", texts}, {"model", provider.model}};
  HttpResponse res = http_post_json(provider.base_url, "/v1/embeddings", body,
                                    {}, provider.timeout_s);
  if (!res.transport_error.empty()) {
    throw std::runtime_error("embedding provider unreachable: " +
                             res.transport_error);
  }
  if (res.status != 200) {
    throw std::runtime_error("embedding provider returned HTTP " +
                             std::to_string(res.status));
  }
  nlohmann::json parsed = nlohmann::json::parse(res.body);
  const auto& data = parsed.at("data");
  if (data.size() != texts.size()) {
    throw std::runtime_error("embedding provider returned " +
                             std::to_string(data.size()) + " vectors for " +
                             std::to_string(texts.size()) + " inputs");
  }
  std::optional<std::size_t> dim;
  for (const auto& item : data) {
    std::vector<float> v = item.at("embedding").get<std::vector<float>>();
    if (!dim) dim = v.size();
    if (v.size() != *dim || v.empty()) {
      throw std::runtime_error("embedding provider dimension mismatch");
    }
    out.push_back(std::move(v));
  }
  return out;
}

// ---- Scalar quantization ---------------------------------------------------

struct ScalarQuantParams {
  std::vector<float> mins;
  std::vector<float> maxs;
};

inline ScalarQuantParams sq_fit(const std::vector<std::vector<float>>& vectors) {
  if (vectors.empty()) throw std::invalid_argument("sq_fit: empty input");
  std::size_t d = vectors[0].size();
  ScalarQuantParams p;
  p.mins.assign(d, std::numeric_limits<float>::max());
  p.maxs.assign(d, std::numeric_limits<float>::lowest());
  for (const auto& v : vectors) {
    if (v.size() != d) throw std::invalid_argument("sq_fit: ragged input");
    for (std::size_t i = 0; i < d; ++i) {
      p.mins[i] = std::min(p.mins[i], v[i]);
      p.maxs[i] = std::max(p.maxs[i], v[i]);
    }
  }
  return p;
}

// code = round((v-min)/(max-min)*255), half away from zero, clamped to
// [0,255]. Degenerate dimensions (max == min) always code to 0.
inline std::vector<std::uint8_t> sq_quantize(const std::vector<float>& v,
                                             const ScalarQuantParams& p) {
  if (v.size() != p.mins.size()) {
    throw std::invalid_argument("sq_quantize: dimension mismatch");
  }
  std::vector<std::uint8_t> codes(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double span = static_cast<double>(p.maxs[i]) - p.mins[i];
    if (span <= 0.0) {
      codes[i] = 0;
      continue;
    }
    long c = std::lround((static_cast<double>(v[i]) - p.mins[i]) / span * 255.0);
    codes[i] = static_cast<std::uint8_t>(std::clamp(c, 0l, 255l));
  }
  return codes;
}

inline std::vector<float> sq_dequantize(const std::vector<std::uint8_t>& codes,
                                        const ScalarQuantParams& p) {
  if (codes.size() != p.mins.size()) {
    throw std::invalid_argument("sq_dequantize: dimension mismatch");
  }
  std::vector<float> v(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    double span = static_cast<double>(p.maxs[i]) - p.mins[i];
    v[i] = static_cast<float>(p.mins[i] + span * (codes[i] / 255.0));
  }
  return v;
}

// ---- Product quantization --------------------------------------------------

struct ProductQuantParams {
  std::size_t M = 8;
  std::size_t k = 256;
  std::uint64_t seed = 42;
  std::size_t dim = 0;
  // M * k * (dim/M) floats, subspace-major then centroid-major.
  std::vector<float> codebooks;

  std::size_t sub_dim() const { return M == 0 ? 0 : dim / M; }
  const float* centroid(std::size_t m, std::size_t c) const {
    return codebooks.data() + (m * k + c) * sub_dim();
  }
  float* centroid(std::size_t m, std::size_t c) {
    return codebooks.data() + (m * k + c) * sub_dim();
  }
};

namespace detail {

inline double sq_dist(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

inline ProductQuantParams pq_train(const std::vector<std::vector<float>>& vectors,
                                   std::size_t M, std::size_t k,
                                   std::uint64_t seed) {
  if (vectors.empty()) throw std::invalid_argument("pq_train: empty input");
  std::size_t d = vectors[0].size();
  if (M == 0 || d % M != 0) {
    throw std::invalid_argument("pq_train: dimension not divisible by M");
  }
  if (k == 0 || k > 256) throw std::invalid_argument("pq_train: k must be in [1,256]");
  if (vectors.size() < k) {
    throw std::invalid_argument("pq_train: fewer training vectors than k");
  }
  const std::size_t n = vectors.size();
  const std::size_t sd = d / M;
  ProductQuantParams params;
  params.M = M;
  params.k = k;
  params.seed = seed;
  params.dim = d;
  params.codebooks.assign(M * k * sd, 0.0f);

  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t off = m * sd;
    auto sub = [&](std::size_t idx) { return vectors[idx].data() + off; };

    // Init: k sub-vectors with distinct values sampled by index. If the data
    // has too few distinct sub-vectors the remainder is filled in input order,
    // which leaves duplicate centroids; empty clusters below keep them stable.
    std::mt19937_64 rng(seed + m);
    std::vector<std::size_t> chosen;
    std::size_t attempts = 0;
    while (chosen.size() < k && attempts < 64 * (n + k)) {
      ++attempts;
      std::size_t idx = static_cast<std::size_t>(rng() % n);
      bool dup = false;
      for (std::size_t c : chosen) {
        if (std::memcmp(sub(c), sub(idx), sd * sizeof(float)) == 0) {
          dup = true;
          break;
        }
      }
      if (!dup) chosen.push_back(idx);
    }
    for (std::size_t idx = 0; chosen.size() < k; ++idx) {
      chosen.push_back(idx % n);
    }
    for (std::size_t c = 0; c < k; ++c) {
      std::memcpy(params.centroid(m, c), sub(chosen[c]), sd * sizeof(float));
    }

    std::vector<std::size_t> assign(n, 0);
    for (int iter = 0; iter < 25; ++iter) {
      for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_c = 0;
        for (std::size_t c = 0; c < k; ++c) {
          double dist = detail::sq_dist(sub(i), params.centroid(m, c), sd);
          if (dist < best) {
            best = dist;
            best_c = c;
          }
        }
        assign[i] = best_c;
      }
      std::vector<double> sums(k * sd, 0.0);
      std::vector<std::size_t> counts(k, 0);
      for (std::size_t i = 0; i < n; ++i) {
        ++counts[assign[i]];
        for (std::size_t j = 0; j < sd; ++j) {
          sums[assign[i] * sd + j] += sub(i)[j];
        }
      }
      double movement = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;  // keep previous centroid
        double move_sq = 0.0;
        for (std::size_t j = 0; j < sd; ++j) {
          float next = static_cast<float>(sums[c * sd + j] / counts[c]);
          double delta = static_cast<double>(next) - params.centroid(m, c)[j];
          move_sq += delta * delta;
          params.centroid(m, c)[j] = next;
        }
        movement = std::max(movement, std::sqrt(move_sq));
      }
      if (movement < 1e-6) break;
    }
  }
  return params;
}

inline std::vector<std::uint8_t> pq_encode(const std::vector<float>& v,
                                           const ProductQuantParams& p) {
  if (v.size() != p.dim) {
    throw std::invalid_argument("pq_encode: dimension mismatch");
  }
  std::vector<std::uint8_t> codes(p.M);
  const std::size_t sd = p.sub_dim();
  for (std::size_t m = 0; m < p.M; ++m) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < p.k; ++c) {
      double dist = detail::sq_dist(v.data() + m * sd, p.centroid(m, c), sd);
      if (dist < best) {
        best = dist;
        best_c = c;
      }
    }
    codes[m] = static_cast<std::uint8_t>(best_c);
  }
  return codes;
}

inline std::vector<float> pq_decode(const std::vector<std::uint8_t>& codes,
                                    const ProductQuantParams& p) {
  if (codes.size() != p.M) {
    throw std::invalid_argument("pq_decode: code length mismatch");
  }
  std::vector<float> v(p.dim);
  const std::size_t sd = p.sub_dim();
  for (std::size_t m = 0; m < p.M; ++m) {
    std::memcpy(v.data() + m * sd, p.centroid(m, codes[m]), sd * sizeof(float));
  }
  return v;
}

// ---- Index -----------------------------------------------------------------

enum class QuantMode { none, sq, pq };

inline std::string to_string(QuantMode m) {
  switch (m) {
    case QuantMode::none: return "no";
    case QuantMode::sq: return "sq";
    case QuantMode::pq: return "pq";
  }
  return "no";
}

inline QuantMode quant_mode_from_string(std::string_view s) {
  if (s == "no" || s == "none") return QuantMode::none;
  if (s == "sq") return QuantMode::sq;
  if (s == "pq") return QuantMode::pq;
  throw std::runtime_error("unknown quantization mode: " + std::string(s));
}

struct PqOptions {
  std::size_t m = 8;
  std::size_t k = 256;
  std::uint64_t seed = 42;
};

struct VectorIndex {
  QuantMode mode = QuantMode::none;
  std::size_t dim = 0;
  std::vector<Chunk> chunks;
  // Mode-specific storage. `stored` always holds the representation search
  // scores against: raw vectors for `no`, dequantized/decoded otherwise.
  std::vector<float> raw;                // none: count * dim
  std::vector<std::uint8_t> sq_codes;    // sq: count * dim
  ScalarQuantParams sq_params;
  std::vector<std::uint8_t> pq_codes;    // pq: count * M
  ProductQuantParams pq_params;
  std::vector<float> stored;

  std::size_t size() const { return chunks.size(); }
};

inline VectorIndex build_index(std::vector<Chunk> chunks,
                               const std::vector<std::vector<float>>& vectors,
                               QuantMode mode, const PqOptions& pq = {}) {
  if (chunks.size() != vectors.size()) {
    throw std::invalid_argument("build_index: chunk/vector count mismatch");
  }
  if (vectors.empty()) throw std::invalid_argument("build_index: empty input");
  VectorIndex index;
  index.mode = mode;
  index.dim = vectors[0].size();
  index.chunks = std::move(chunks);
  for (const auto& v : vectors) {
    if (v.size() != index.dim) {
      throw std::invalid_argument("build_index: ragged vectors");
    }
  }
  const std::size_t n = vectors.size();
  index.stored.reserve(n * index.dim);
  switch (mode) {
    case QuantMode::none:
      for (const auto& v : vectors) {
        index.raw.insert(index.raw.end(), v.begin(), v.end());
      }
      index.stored = index.raw;
      break;
    case QuantMode::sq: {
      index.sq_params = sq_fit(vectors);
      for (const auto& v : vectors) {
        auto codes = sq_quantize(v, index.sq_params);
        auto deq = sq_dequantize(codes, index.sq_params);
        index.sq_codes.insert(index.sq_codes.end(), codes.begin(), codes.end());
        index.stored.insert(index.stored.end(), deq.begin(), deq.end());
      }
      break;
    }
    case QuantMode::pq: {
      index.pq_params = pq_train(vectors, pq.m, pq.k, pq.seed);
      for (const auto& v : vectors) {
        auto codes = pq_encode(v, index.pq_params);
        auto dec = pq_decode(codes, index.pq_params);
        index.pq_codes.insert(index.pq_codes.end(), codes.begin(), codes.end());
        index.stored.insert(index.stored.end(), dec.begin(), dec.end());
      }
      break;
    }
  }
  return index;
}

inline double cosine_similarity(const float* a, const float* b, std::size_t n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct SearchHit {
  std::size_t ord = 0;  // insertion position in the index
  std::string chunk_id;
  double score = 0.0;
};

inline std::vector<SearchHit> search_top_k(const VectorIndex& index,
                                           const std::vector<float>& query,
                                           std::size_t k) {
  if (index.size() == 0) throw std::invalid_argument("search on empty index");
  if (query.size() != index.dim) {
    throw std::invalid_argument("search_top_k: dimension mismatch");
  }
  if (k == 0) throw std::invalid_argument("search_top_k: k must be >= 1");
  const std::size_t n = index.size();
  std::vector<SearchHit> hits(n);
  for (std::size_t i = 0; i < n; ++i) {
    hits[i].ord = i;
    hits[i].chunk_id = index.chunks[i].id;
    hits[i].score = cosine_similarity(query.data(),
                                      index.stored.data() + i * index.dim,
                                      index.dim);
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const SearchHit& a, const SearchHit& b) {
                     return a.score > b.score;
                   });
  hits.resize(std::min(k, n));
  return hits;
}

// ---- Snapshot --------------------------------------------------------------

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) {
  out.push_back(static_cast<char>(v));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

struct SnapshotReader {
  std::string_view data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) {
      throw std::runtime_error("index snapshot truncated");
    }
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos++])) << (8 * i);
    }
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data[pos++])) << (8 * i);
    }
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }
};

}  // namespace detail

inline constexpr char kIndexMagic[8] = {'C', 'E', 'B', 'V', 'I', 'D', 'X', '1'};

inline void save_index(const VectorIndex& index, const std::string& path) {
  std::string out;
  out.append(kIndexMagic, 8);
  detail::put_u8(out, static_cast<std::uint8_t>(index.mode));
  detail::put_u32(out, static_cast<std::uint32_t>(index.dim));
  std::uint32_t M = 0, k = 0;
  if (index.mode == QuantMode::pq) {
    M = static_cast<std::uint32_t>(index.pq_params.M);
    k = static_cast<std::uint32_t>(index.pq_params.k);
  }
  detail::put_u32(out, M);
  detail::put_u32(out, k);
  detail::put_u64(out, index.size());
  switch (index.mode) {
    case QuantMode::none:
      for (float v : index.raw) detail::put_f32(out, v);
      break;
    case QuantMode::sq:
      for (float v : index.sq_params.mins) detail::put_f32(out, v);
      for (float v : index.sq_params.maxs) detail::put_f32(out, v);
      out.append(reinterpret_cast<const char*>(index.sq_codes.data()),
                 index.sq_codes.size());
      break;
    case QuantMode::pq:
      for (float v : index.pq_params.codebooks) detail::put_f32(out, v);
      out.append(reinterpret_cast<const char*>(index.pq_codes.data()),
                 index.pq_codes.size());
      break;
  }
  for (const auto& c : index.chunks) {
    detail::put_str(out, c.id);
    detail::put_str(out, c.source_path);
    detail::put_u64(out, c.start_offset);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write index snapshot: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("short write on index snapshot: " + path);
}

// Rebuilds the searchable representation from codes; chunk text is not part
// of the snapshot, only ids and offsets.
inline VectorIndex load_index(const std::string& path) {
  std::string bytes = read_text_file(path);
  detail::SnapshotReader r{bytes};
  r.need(8);
  if (std::memcmp(bytes.data(), kIndexMagic, 8) != 0) {
    throw std::runtime_error("not an index snapshot: " + path);
  }
  r.pos = 8;
  VectorIndex index;
  std::uint8_t mode = r.u8();
  if (mode > 2) throw std::runtime_error("index snapshot has unknown mode");
  index.mode = static_cast<QuantMode>(mode);
  index.dim = r.u32();
  std::uint32_t M = r.u32();
  std::uint32_t k = r.u32();
  std::uint64_t count = r.u64();
  switch (index.mode) {
    case QuantMode::none:
      index.raw.resize(count * index.dim);
      for (auto& v : index.raw) v = r.f32();
      index.stored = index.raw;
      break;
    case QuantMode::sq: {
      index.sq_params.mins.resize(index.dim);
      index.sq_params.maxs.resize(index.dim);
      for (auto& v : index.sq_params.mins) v = r.f32();
      for (auto& v : index.sq_params.maxs) v = r.f32();
      index.sq_codes.resize(count * index.dim);
      r.need(index.sq_codes.size());
      std::memcpy(index.sq_codes.data(), bytes.data() + r.pos,
                  index.sq_codes.size());
      r.pos += index.sq_codes.size();
      index.stored.reserve(count * index.dim);
      for (std::uint64_t i = 0; i < count; ++i) {
        std::vector<std::uint8_t> codes(
            index.sq_codes.begin() + i * index.dim,
            index.sq_codes.begin() + (i + 1) * index.dim);
        auto deq = sq_dequantize(codes, index.sq_params);
        index.stored.insert(index.stored.end(), deq.begin(), deq.end());
      }
      break;
    }
    case QuantMode::pq: {
      index.pq_params.M = M;
      index.pq_params.k = k;
      index.pq_params.dim = index.dim;
      index.pq_params.codebooks.resize(M * k * (index.dim / M));
      for (auto& v : index.pq_params.codebooks) v = r.f32();
      index.pq_codes.resize(count * M);
      r.need(index.pq_codes.size());
      std::memcpy(index.pq_codes.data(), bytes.data() + r.pos,
                  index.pq_codes.size());
      r.pos += index.pq_codes.size();
      index.stored.reserve(count * index.dim);
      for (std::uint64_t i = 0; i < count; ++i) {
        std::vector<std::uint8_t> codes(index.pq_codes.begin() + i * M,
                                        index.pq_codes.begin() + (i + 1) * M);
        auto dec = pq_decode(codes, index.pq_params);
        index.stored.insert(index.stored.end(), dec.begin(), dec.end());
      }
      break;
    }
  }
  index.chunks.resize(count);
  for (auto& c : index.chunks) {
    c.id = r.str();
    c.source_path = r.str();
    c.start_offset = r.u64();
  }
  return index;
}

}  // namespace cebench
