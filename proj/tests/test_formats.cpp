#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <cstring>
#include <limits>

#include "support/fuzz.hpp"
#include "ulm/errors.hpp"
#include "ulm/evalsuite.hpp"
#include "ulm/formats.hpp"
#include "ulm/hash.hpp"
#include "ulm/model.hpp"
#include "ulm/rng.hpp"
#include "ulm/surgery.hpp"
#include "ulm/tokenizer.hpp"

using namespace ulm;
using ulm::testing::fuzz_decoder;
using ulm::testing::to_bytes;
using ulm::testing::to_string;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ulm-formats-" + std::to_string(Rng(reinterpret_cast<std::uintptr_t>(this)).next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

FeatureSequence random_features(std::uint32_t dim, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  FeatureSequence x{dim, {}, 50.0};
  x.frames.resize(dim * frames);
  for (auto& v : x.frames) v = static_cast<float>(rng.normal() * 3.0);
  return x;
}

Codebook small_codebook() {
  Codebook cb;
  cb.dim = 3;
  cb.k = 2;
  cb.centroids = {0.f, 1.f, 2.f, -1.5f, 0.25f, 1e-30f};
  cb.distortion_trace = {4.0, 2.5, 2.5};
  cb.seed = 99;
  cb.iters_run = 3;
  return cb;
}

PairwiseBenchmark small_benchmark() {
  return {"demo", 5, {{"a", {{0, 1, 2}, 5}, {{0, 2, 1}, 5}}, {"b", {{4}, 5}, {{3}, 5}}}};
}

EvalReport small_report() {
  EvalReport r;
  r.metrics = {{"acc", 0.75, 4, "abc", MetricEntry::Kind::kAccuracy},
               {"ppl", 12.5, 100, "def", MetricEntry::Kind::kPerplexity},
               {"auto_bleu", 0.1 + 0.2, 10, "", MetricEntry::Kind::kOther}};
  r.seed = 42;
  r.timestamp = "1970-01-01T00:00:00Z";
  r.config_json = R"({"k":3})";
  return r;
}

}  // namespace

TEST_SUITE("formats") {
  TEST_CASE("features: layout and round-trip") {
    FeatureSequence x{2, {0, 0, 1, 1}, 50.0};
    const auto bytes = encode_features(x);
    CHECK(bytes.size() == 8 + 12 + 16);
    CHECK(to_string(bytes).substr(0, 8) == "ULMFEAT1");
    // dim, frame count and rate in mHz, little-endian
    CHECK(bytes[8] == std::byte{2});
    CHECK(bytes[12] == std::byte{2});
    CHECK(static_cast<unsigned>(bytes[16]) + 256u * static_cast<unsigned>(bytes[17]) == 50000u);
    CHECK(decode_features(bytes) == x);

    TempDir dir;
    const auto big = random_features(39, 64, 7);
    write_features(dir / "f.bin", big);
    CHECK(read_file(dir / "f.bin") == encode_features(big));
    CHECK(read_features(dir / "f.bin") == big);
  }

  TEST_CASE("features: errors") {
    CHECK_THROWS_AS(encode_features(FeatureSequence{2, {}, 50.0}), ValidationError);
    auto bytes = encode_features(FeatureSequence{1, {1.f}, 50.0});
    auto bad = bytes;
    bad[0] = std::byte{'X'};
    CHECK_THROWS_AS(decode_features(bad), FormatError);
    CHECK_THROWS_AS(decode_features(std::span(bytes).first(bytes.size() - 1)), TruncationError);
    auto nan = bytes;
    const auto bits = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
    for (int i = 0; i < 4; ++i) nan[20 + i] = static_cast<std::byte>((bits >> (8 * i)) & 0xff);
    CHECK_THROWS_AS(decode_features(nan), ValidationError);
  }

  TEST_CASE("tokens: encoding, bounds and round-trip") {
    CHECK(encode_tokens({{{0, 1, 1, 2}, 3}}) == "0 1 1 2\n");
    CHECK_THROWS_AS(decode_tokens("5\n", 5), ValidationError);
    CHECK_THROWS_AS(decode_tokens("1 2\n\n3\n", 5), ValidationError);
    CHECK_THROWS_AS(decode_tokens("1 x\n", 5), FormatError);
    CHECK_THROWS_AS(decode_tokens("1  2\n", 5), FormatError);
    CHECK_THROWS_AS(decode_tokens("1 2", 5), FormatError);

    Rng rng(3);
    Corpus c;
    for (int i = 0; i < 1000; ++i) {
      TokenSequence z{std::vector<TokenId>(static_cast<std::size_t>(rng.between(1, 40))), 500};
      for (auto& t : z.tokens) t = static_cast<TokenId>(rng.below(500));
      c.push_back(std::move(z));
    }
    CHECK(decode_tokens(encode_tokens(c), 500) == c);
    TempDir dir;
    write_tokens(dir / "t.txt", c);
    CHECK(read_tokens(dir / "t.txt", 500) == c);
  }

  TEST_CASE("checkpoint: round-trip, hash and provenance") {
    const auto ck = cold_init(preset_config("tiny", 20), 4);
    const auto bytes = encode_checkpoint(ck);
    CHECK(to_string(bytes).substr(0, 8) == "ULMCKPT1");
    CHECK(decode_checkpoint(bytes) == ck);
    TempDir dir;
    write_checkpoint(dir / "c.ckpt", ck);
    const auto back = read_checkpoint(dir / "c.ckpt");
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
      CHECK(std::memcmp(back.tensors[i].tensor.data.data(), ck.tensors[i].tensor.data.data(),
                        ck.tensors[i].tensor.data.size() * sizeof(float)) == 0);
    }
    CHECK(checkpoint_hash(ck) == sha256_hex(read_file(dir / "c.ckpt")));

    const auto warm = twist_init(ck, Vocabulary{50}, 8).checkpoint;
    write_checkpoint(dir / "w.ckpt", warm);
    const auto warm_back = read_checkpoint(dir / "w.ckpt");
    CHECK(warm_back.provenance.tag() == "warm:" + sha256_hex(read_file(dir / "c.ckpt")));
    CHECK(warm_back == warm);
  }

  TEST_CASE("checkpoint: errors") {
    const auto ck = cold_init(preset_config("tiny", 6), 1);
    const auto bytes = encode_checkpoint(ck);
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(bytes.size() - 4)), TruncationError);
    auto extra = bytes;
    extra.push_back(std::byte{0});
    CHECK_THROWS_AS(decode_checkpoint(extra), FormatError);

    // Splice an unknown field into the config object of the header.
    std::string text = to_string(bytes);
    const auto pos = text.find("\"config\":{");
    REQUIRE(pos != std::string::npos);
    const std::string inject = "\"colour\":1,";
    text.insert(pos + 10, inject);
    auto patched = to_bytes(text);
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(patched[8 + i]) << (8 * i);
    hlen += inject.size();
    for (int i = 0; i < 8; ++i) patched[8 + i] = static_cast<std::byte>((hlen >> (8 * i)) & 0xff);
    CHECK_THROWS_AS(decode_checkpoint(patched), ValidationError);
  }

  TEST_CASE("codebook, benchmark and report round-trips") {
    const auto cb = small_codebook();
    CHECK(decode_codebook(encode_codebook(cb)) == cb);
    const auto b = small_benchmark();
    CHECK(decode_benchmark(encode_benchmark(b)) == b);
    const auto r = small_report();
    CHECK(decode_report(encode_report(r)) == r);
    CHECK(encode_report(decode_report(encode_report(r))) == encode_report(r));

    TempDir dir;
    write_codebook(dir / "cb.bin", cb);
    CHECK(read_codebook(dir / "cb.bin") == cb);
    write_benchmark(dir / "b.json", b);
    CHECK(read_benchmark(dir / "b.json") == b);
    write_report(dir / "r.json", r);
    CHECK(read_report(dir / "r.json") == r);
  }

  TEST_CASE("report validation") {
    auto r = small_report();
    r.metrics[0].value = 1.5;
    CHECK_THROWS_AS(encode_report(r), ValidationError);
    r = small_report();
    r.metrics[1].value = 0.5;
    CHECK_THROWS_AS(encode_report(r), ValidationError);
    CHECK_THROWS_AS(decode_report("{\"metrics\":[]}"), ValidationError);
    CHECK_THROWS_AS(decode_report("not json"), FormatError);
  }

  TEST_CASE("report timestamp follows SOURCE_DATE_EPOCH") {
    ::setenv("SOURCE_DATE_EPOCH", "86400", 1);
    CHECK(report_timestamp() == "1970-01-02T00:00:00Z");
    ::unsetenv("SOURCE_DATE_EPOCH");
    CHECK(report_timestamp() == "1970-01-01T00:00:00Z");
  }

  TEST_CASE("atomic writes leave no temp files behind") {
    TempDir dir;
    write_file_atomic(dir / "a.txt", std::string_view("one"));
    write_file_atomic(dir / "a.txt", std::string_view("two"));
    CHECK(read_text_file(dir / "a.txt") == "two");
    int files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++files;
    CHECK(files == 1);
    CHECK_THROWS_AS(write_file_atomic(dir / "missing" / "x", std::string_view("y")), IoError);
    CHECK_THROWS_AS(read_file(dir / "absent"), IoError);
  }

  TEST_CASE("corrupted inputs give typed errors only") {
    struct Target {
      const char* name;
      std::vector<std::byte> valid;
      std::function<void(const std::vector<std::byte>&)> decode;
    };
    const std::vector<Target> targets = {
        {"features", encode_features(random_features(5, 8, 1)),
         [](const auto& b) { decode_features(b); }},
        {"tokens", to_bytes(encode_tokens({{{1, 2, 3}, 10}, {{9}, 10}})),
         [](const auto& b) { decode_tokens(to_string(b), 10); }},
        {"checkpoint", encode_checkpoint(cold_init(preset_config("tiny", 5), 2)),
         [](const auto& b) { decode_checkpoint(b); }},
        {"codebook", encode_codebook(small_codebook()), [](const auto& b) { decode_codebook(b); }},
        {"benchmark", to_bytes(encode_benchmark(small_benchmark())),
         [](const auto& b) { decode_benchmark(to_string(b)); }},
        {"report", to_bytes(encode_report(small_report())),
         [](const auto& b) { decode_report(to_string(b)); }},
    };
    for (const auto& t : targets) {
      CAPTURE(t.name);
      const auto tally = fuzz_decoder(t.valid, 400, 17, t.decode);
      CHECK(tally.other == 0);
      CHECK(tally.typed_error > 0);
    }
  }
}
