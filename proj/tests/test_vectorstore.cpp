#include "cebench/vectorstore.hpp"

#include <algorithm>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "testutil.hpp"

using namespace cebench;

namespace {

// Independent re-derivation of the hashed bag-of-words embedding, built from
// the published FNV-1a constants rather than the library's hash helper.
std::vector<float> oracle_embed(const std::string& text, std::size_t dim) {
  auto fnv = [](const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  };
  std::vector<double> counts(dim, 0.0);
  std::string token;
  bool any = false;
  auto flush = [&]() {
    if (!token.empty()) {
      counts[fnv(token) % dim] += 1.0;
      any = true;
      token.clear();
    }
  };
  for (unsigned char c : text) {
    if (c < 0x80 && std::isalnum(c)) token.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  if (!any) counts[fnv(text) % dim] = 1.0;
  double norm = 0.0;
  for (double v : counts) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(counts[i] / norm);
  return out;
}

std::vector<Chunk> make_chunks(std::size_t n) {
  std::vector<Chunk> chunks(n);
  for (std::size_t i = 0; i < n; ++i) {
    chunks[i].id = "c#" + std::to_string(i);
    chunks[i].source_path = "c";
    chunks[i].start_offset = i;
    chunks[i].text = "chunk " + std::to_string(i);
  }
  return chunks;
}

// Brute-force cosine ranking in double precision, stable on ties.
std::vector<SearchHit> oracle_search(const VectorIndex& index,
                                     const std::vector<float>& query,
                                     std::size_t k) {
  std::vector<SearchHit> hits(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const float* v = index.stored.data() + i * index.dim;
    double dot = 0, nq = 0, nv = 0;
    for (std::size_t j = 0; j < index.dim; ++j) {
      dot += static_cast<double>(query[j]) * v[j];
      nq += static_cast<double>(query[j]) * query[j];
      nv += static_cast<double>(v[j]) * v[j];
    }
    hits[i].ord = i;
    hits[i].chunk_id = index.chunks[i].id;
    hits[i].score = (nq == 0 || nv == 0) ? 0.0 : dot / (std::sqrt(nq) * std::sqrt(nv));
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const SearchHit& a, const SearchHit& b) {
                     return a.score > b.score;
                   });
  hits.resize(std::min(k, hits.size()));
  return hits;
}

}  // namespace

TEST_CASE("builtin embedding matches an independent re-derivation") {
  const char* texts[] = {
      "The quick brown fox", "score: 12", "a a a b", "",
      "!!!", "Tokens, MORE tokens; tokens.", "unicode caf\xc3\xa9 crumbs"};
  for (const char* t : texts) {
    auto got = embed_builtin(t, 64);
    auto want = oracle_embed(t, 64);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE_THAT(got[i], Catch::Matchers::WithinAbs(want[i], 1e-12));
    }
  }
}

TEST_CASE("builtin embedding always has unit norm") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    std::size_t len = rng() % 40;
    for (std::size_t i = 0; i < len; ++i) {
      s.push_back(static_cast<char>(' ' + rng() % 95));
    }
    auto v = embed_builtin(s, 32);
    double norm = 0;
    for (float x : v) norm += static_cast<double>(x) * x;
    REQUIRE_THAT(std::sqrt(norm), Catch::Matchers::WithinAbs(1.0, 1e-6));
  }
  CHECK_THROWS_AS(embed_builtin("x", 0), std::invalid_argument);
}

TEST_CASE("repeated tokens weight their bucket") {
  // "b b b" puts count 3 in one bucket; cosine against "b" must be 1.
  auto one = embed_builtin("b", 512);
  auto three = embed_builtin("b b b", 512);
  CHECK_THAT(cosine_similarity(one.data(), three.data(), 512),
             Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("scalar quantization codes the corpus extremes to 0 and 255") {
  std::vector<std::vector<float>> corpus = {
      {0.0f, 10.0f}, {5.0f, 20.0f}, {10.0f, 30.0f}};
  auto params = sq_fit(corpus);
  CHECK(params.mins == std::vector<float>{0.0f, 10.0f});
  CHECK(params.maxs == std::vector<float>{10.0f, 30.0f});
  CHECK(sq_quantize(corpus[0], params) == std::vector<std::uint8_t>{0, 0});
  // (5-0)/10*255 = 127.5 rounds half away from zero to 128; same for dim 2.
  CHECK(sq_quantize(corpus[1], params) == std::vector<std::uint8_t>{128, 128});
  CHECK(sq_quantize(corpus[2], params) == std::vector<std::uint8_t>{255, 255});
}

TEST_CASE("degenerate dimensions code to zero and decode to the min") {
  std::vector<std::vector<float>> corpus = {{3.5f, 1.0f}, {3.5f, 2.0f}};
  auto params = sq_fit(corpus);
  auto codes = sq_quantize(corpus[0], params);
  CHECK(codes[0] == 0);
  CHECK(sq_dequantize(codes, params)[0] == 3.5f);
}

TEST_CASE("scalar quantization round-trip error stays within half a step") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t n = 2 + rng() % 30;
    std::size_t d = 1 + rng() % 16;
    std::vector<std::vector<float>> corpus(n, std::vector<float>(d));
    for (auto& v : corpus) {
      for (auto& x : v) {
        x = static_cast<float>((static_cast<double>(rng() % 20000) - 10000) / 700.0);
      }
    }
    auto params = sq_fit(corpus);
    for (const auto& v : corpus) {
      auto deq = sq_dequantize(sq_quantize(v, params), params);
      for (std::size_t i = 0; i < d; ++i) {
        double span = static_cast<double>(params.maxs[i]) - params.mins[i];
        double bound = span / 510.0 + 1e-6;
        REQUIRE(std::abs(deq[i] - v[i]) <= bound);
      }
    }
  }
}

TEST_CASE("product quantization reconstructs clustered data exactly") {
  // 4 distinct prototypes in R^16; with k=4 per subspace the codebook can
  // represent every vector, so reconstruction error collapses.
  std::mt19937_64 rng(37);
  std::vector<std::vector<float>> protos(4, std::vector<float>(16));
  for (auto& p : protos) {
    for (auto& x : p) x = static_cast<float>((rng() % 1000) / 100.0 - 5.0);
  }
  std::vector<std::vector<float>> corpus;
  for (int i = 0; i < 120; ++i) corpus.push_back(protos[rng() % 4]);
  auto params = pq_train(corpus, 4, 4, 42);
  double mse = 0.0;
  for (const auto& v : corpus) {
    auto dec = pq_decode(pq_encode(v, params), params);
    for (std::size_t j = 0; j < v.size(); ++j) {
      double dl = static_cast<double>(dec[j]) - v[j];
      mse += dl * dl;
    }
  }
  mse /= static_cast<double>(corpus.size() * 16);
  CHECK(mse <= 1e-6);
}

TEST_CASE("product quantization is deterministic in the seed") {
  std::mt19937_64 rng(41);
  std::vector<std::vector<float>> corpus(50, std::vector<float>(8));
  for (auto& v : corpus) {
    for (auto& x : v) x = static_cast<float>((rng() % 1000) / 250.0);
  }
  auto a = pq_train(corpus, 2, 8, 7);
  auto b = pq_train(corpus, 2, 8, 7);
  CHECK(a.codebooks == b.codebooks);
  for (const auto& v : corpus) {
    CHECK(pq_encode(v, a) == pq_encode(v, b));
  }
}

TEST_CASE("product quantization rejects bad shapes") {
  std::vector<std::vector<float>> corpus(10, std::vector<float>(10, 1.0f));
  CHECK_THROWS_AS(pq_train(corpus, 3, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(pq_train(corpus, 2, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(pq_train(corpus, 2, 300, 1), std::invalid_argument);
  CHECK_THROWS_AS(pq_train(corpus, 2, 11, 1), std::invalid_argument);
  CHECK_THROWS_AS(pq_train({}, 2, 2, 1), std::invalid_argument);
}

TEST_CASE("search agrees with brute force on random corpora") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t n = 1 + rng() % 60;
    std::size_t d = 1 + rng() % 32;
    std::vector<std::vector<float>> vecs(n, std::vector<float>(d));
    // Small integer grid provokes exact score ties.
    for (auto& v : vecs) {
      for (auto& x : v) x = static_cast<float>(static_cast<int>(rng() % 4));
    }
    auto index = build_index(make_chunks(n), vecs, QuantMode::none);
    std::vector<float> query(d);
    for (auto& x : query) x = static_cast<float>(static_cast<int>(rng() % 4));
    std::size_t k = 1 + rng() % (n + 2);
    auto got = search_top_k(index, query, k);
    auto want = oracle_search(index, query, k);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].ord == want[i].ord);
      REQUIRE(got[i].chunk_id == want[i].chunk_id);
      REQUIRE(got[i].score == want[i].score);
    }
  }
}

TEST_CASE("equal-score hits keep insertion order") {
  std::vector<std::vector<float>> vecs(5, std::vector<float>{1.0f, 2.0f});
  auto index = build_index(make_chunks(5), vecs, QuantMode::none);
  auto hits = search_top_k(index, {2.0f, 4.0f}, 5);
  REQUIRE(hits.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(hits[i].ord == i);
    CHECK_THAT(hits[i].score, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("zero vectors score zero instead of dividing by zero") {
  std::vector<std::vector<float>> vecs = {{0.0f, 0.0f}, {1.0f, 0.0f}};
  auto index = build_index(make_chunks(2), vecs, QuantMode::none);
  auto hits = search_top_k(index, {0.0f, 1.0f}, 2);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].score == 0.0);
  CHECK(hits[1].score == 0.0);
  CHECK(hits[0].ord == 0);
}

TEST_CASE("search validates its inputs") {
  std::vector<std::vector<float>> vecs = {{1.0f, 0.0f}};
  auto index = build_index(make_chunks(1), vecs, QuantMode::none);
  CHECK_THROWS_AS(search_top_k(index, {1.0f}, 1), std::invalid_argument);
  CHECK_THROWS_AS(search_top_k(index, {1.0f, 0.0f}, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_index({}, {}, QuantMode::none), std::invalid_argument);
}

TEST_CASE("snapshots round-trip every quantization mode") {
  testutil::TempDir tmp("vs-snap");
  std::mt19937_64 rng(47);
  std::size_t n = 20, d = 8;
  std::vector<std::vector<float>> vecs(n, std::vector<float>(d));
  for (auto& v : vecs) {
    for (auto& x : v) x = static_cast<float>((rng() % 2000) / 300.0 - 3.0);
  }
  PqOptions pq;
  pq.m = 2;
  pq.k = 4;
  pq.seed = 5;
  for (QuantMode mode : {QuantMode::none, QuantMode::sq, QuantMode::pq}) {
    auto index = build_index(make_chunks(n), vecs, mode, pq);
    std::string path = tmp.file("idx-" + to_string(mode) + ".bin");
    save_index(index, path);
    auto loaded = load_index(path);
    REQUIRE(loaded.mode == index.mode);
    REQUIRE(loaded.dim == index.dim);
    REQUIRE(loaded.size() == index.size());
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(loaded.chunks[i].id == index.chunks[i].id);
      REQUIRE(loaded.chunks[i].source_path == index.chunks[i].source_path);
      REQUIRE(loaded.chunks[i].start_offset == index.chunks[i].start_offset);
    }
    REQUIRE(loaded.raw == index.raw);
    REQUIRE(loaded.sq_codes == index.sq_codes);
    REQUIRE(loaded.sq_params.mins == index.sq_params.mins);
    REQUIRE(loaded.sq_params.maxs == index.sq_params.maxs);
    REQUIRE(loaded.pq_codes == index.pq_codes);
    REQUIRE(loaded.pq_params.codebooks == index.pq_params.codebooks);
    REQUIRE(loaded.stored == index.stored);

    // Identical ranking after reload.
    std::vector<float> query(d, 0.5f);
    auto a = search_top_k(index, query, 5);
    auto b = search_top_k(loaded, query, 5);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].ord == b[i].ord);
      REQUIRE(a[i].score == b[i].score);
    }
  }
}

TEST_CASE("snapshot loading rejects corrupt files") {
  testutil::TempDir tmp("vs-corrupt");
  std::vector<std::vector<float>> vecs = {{1.0f, 2.0f}, {3.0f, 4.0f}};
  auto index = build_index(make_chunks(2), vecs, QuantMode::none);
  std::string path = tmp.file("idx.bin");
  save_index(index, path);

  std::string blob = testutil::read_file(path);
  testutil::write_file(tmp.file("trunc.bin"), blob.substr(0, blob.size() / 2));
  CHECK_THROWS(load_index(tmp.file("trunc.bin")));

  std::string bad = blob;
  bad[0] = 'X';
  testutil::write_file(tmp.file("magic.bin"), bad);
  CHECK_THROWS(load_index(tmp.file("magic.bin")));

  CHECK_THROWS(load_index(tmp.file("missing.bin")));
}

TEST_CASE("quant mode names parse both spellings") {
  CHECK(quant_mode_from_string("no") == QuantMode::none);
  CHECK(quant_mode_from_string("none") == QuantMode::none);
  CHECK(quant_mode_from_string("sq") == QuantMode::sq);
  CHECK(quant_mode_from_string("pq") == QuantMode::pq);
  CHECK_THROWS(quant_mode_from_string("int8"));
  CHECK(to_string(QuantMode::none) == "no");
}
