#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <random>
#include <string>

#include "sds/dataio.hpp"

namespace sds {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("sds_dataio_" + name); }

std::string error_of(const std::string& text, bool detections = false) {
  try {
    if (detections) {
      parse_detections(text, "f");
    } else {
      parse_manifest(text, "f");
    }
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

ManifestRecord sample_record() {
  ManifestRecord r{"train/00000.pgm", 320, 240, {}};
  r.annotations.push_back(Annotation::unoccluded(Box(10.5, 20.25, 41, 100)));
  r.annotations.push_back({Box(100, 10, 32.8, 80), Box(100, 10, 32.8, 40), 0.5, false});
  r.annotations.push_back({Box(200, 50, 10, 20), Box(200, 50, 10, 20), 0.0, true});
  return r;
}

double random_real(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

TEST(Manifest, EmptyFileIsEmptySequence) {
  EXPECT_TRUE(parse_manifest("").empty());
  EXPECT_TRUE(parse_manifest("\n\n  \n").empty());
  const fs::path p = scratch("empty.jsonl");
  write_text_file(p, "");
  EXPECT_TRUE(read_manifest(p).empty());
  fs::remove(p);
}

TEST(Manifest, FileRoundTrip) {
  const std::vector<ManifestRecord> recs{sample_record(), {"test/00001.pgm", 64, 48, {}}};
  const fs::path p = scratch("rt.jsonl");
  write_manifest(recs, p);
  EXPECT_EQ(read_manifest(p), recs);
  fs::remove(p);
}

TEST(Manifest, FormatIsOneObjectPerLine) {
  const std::string text = format_manifest({{"a.pgm", 2, 3, {}}});
  EXPECT_EQ(text, "{\"image_path\":\"a.pgm\",\"image_w\":2,\"image_h\":3,\"annotations\":[]}\n");
}

TEST(Manifest, RandomRoundTrip) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ManifestRecord> recs(static_cast<std::size_t>(rng() % 5));
    for (auto& r : recs) {
      r.image_path = "img/" + std::to_string(rng() % 100000) + ".pgm";
      r.image_w = 1 + static_cast<int>(rng() % 2000);
      r.image_h = 1 + static_cast<int>(rng() % 2000);
      for (int k = static_cast<int>(rng() % 4); k > 0; --k) {
        const Box b(random_real(rng, -50, 500), random_real(rng, -50, 500), random_real(rng, 1e-3, 200),
                    random_real(rng, 1e-3, 400));
        const double occ = random_real(rng, 0, 1);
        r.annotations.push_back({b, Box(b.x, b.y, b.w, b.h * (1 - occ)), occ, (rng() & 1) != 0});
      }
    }
    ASSERT_EQ(parse_manifest(format_manifest(recs)), recs);
  }
}

TEST(Manifest, OcclusionOutOfRangeIsRejected) {
  std::string line = format_manifest({sample_record()});
  line.replace(line.find("\"occlusion\":0.5"), 15, "\"occlusion\":1.5");
  const std::string err = error_of("\n" + line);
  EXPECT_NE(err.find("f:2:"), std::string::npos) << err;
  EXPECT_NE(err.find("occlusion"), std::string::npos) << err;
}

TEST(Manifest, UnknownFieldIsRejectedWithLine) {
  const std::string good = format_manifest({{"a.pgm", 2, 3, {}}});
  const std::string bad = "{\"image_path\":\"a.pgm\",\"image_w\":2,\"image_h\":3,\"annotations\":[],\"extra\":1}\n";
  const std::string err = error_of(good + good + bad);
  EXPECT_NE(err.find("f:3:"), std::string::npos) << err;
  EXPECT_NE(err.find("extra"), std::string::npos) << err;
}

TEST(Manifest, MissingAndMistypedFieldsAreNamed) {
  EXPECT_NE(error_of("{\"image_path\":\"a\",\"image_w\":2,\"annotations\":[]}").find("image_h"), std::string::npos);
  EXPECT_NE(error_of("{\"image_path\":\"a\",\"image_w\":\"2\",\"image_h\":3,\"annotations\":[]}").find("image_w"),
            std::string::npos);
  EXPECT_NE(error_of("{\"image_path\":\"a\",\"image_w\":2,\"image_h\":3,\"annotations\":{}}").find("annotations"),
            std::string::npos);
}

TEST(Manifest, MissingFileIsDataError) {
  EXPECT_THROW(read_manifest(scratch("does_not_exist.jsonl")), DataError);
}

TEST(Detections, ZeroDetectionsIsHeaderOnly) {
  const std::string text = format_detections({});
  EXPECT_EQ(text, "{\"format\":\"sds-detections\",\"version\":1}\n");
  EXPECT_TRUE(parse_detections(text).empty());
}

TEST(Detections, SortedByImageThenDescendingFusedScore) {
  const std::vector<DetectionRecord> in{{1, 0, 0, 1, 2, 0.2, 0, 0},
                                        {0, 0, 0, 1, 2, 0.3, 0, 0},
                                        {1, 0, 0, 1, 2, 0.9, 0, 0},
                                        {0, 0, 0, 1, 2, 0.8, 0, 0},
                                        {0, 5, 0, 1, 2, 0.8, 0, 0}};
  const auto out = parse_detections(format_detections(in));
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out[0], in[3]);
  EXPECT_EQ(out[1], in[4]);  // equal scores keep input order
  EXPECT_EQ(out[2], in[1]);
  EXPECT_EQ(out[3], in[2]);
  EXPECT_EQ(out[4], in[0]);
}

TEST(Detections, RandomRoundTripAndDeterministicBytes) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<DetectionRecord> recs(static_cast<std::size_t>(rng() % 12));
    for (auto& d : recs) {
      d = {static_cast<std::size_t>(rng() % 4), random_real(rng, -10, 600), random_real(rng, -10, 400),
           random_real(rng, 1e-6, 100), random_real(rng, 1e-6, 300), random_real(rng, 0, 1),
           random_real(rng, 0, 1), random_real(rng, 0, 1)};
    }
    const std::string text = format_detections(recs);
    ASSERT_EQ(format_detections(recs), text);
    const auto back = parse_detections(text);
    ASSERT_EQ(format_detections(back), text);
    ASSERT_EQ(back.size(), recs.size());
    for (std::size_t i = 1; i < back.size(); ++i) {
      ASSERT_TRUE(back[i - 1].image_id < back[i].image_id ||
                  (back[i - 1].image_id == back[i].image_id && back[i - 1].fused_score >= back[i].fused_score));
    }
  }
}

TEST(Detections, FileRoundTrip) {
  const std::vector<DetectionRecord> recs{{0, 1.5, 2.5, 10, 20, 0.75, 0.5, 1.0 / 3.0}};
  const fs::path p = scratch("det.jsonl");
  write_detections(recs, p);
  EXPECT_EQ(read_detections(p), recs);
  fs::remove(p);
}

TEST(Detections, RejectsBadInput) {
  const std::string header = "{\"format\":\"sds-detections\",\"version\":1}\n";
  EXPECT_NE(error_of("", true).find("header"), std::string::npos);
  EXPECT_NE(error_of("{\"format\":\"x\",\"version\":1}\n", true).find("format"), std::string::npos);
  EXPECT_NE(error_of("{\"format\":\"sds-detections\",\"version\":2}\n", true).find("version"), std::string::npos);
  const std::string rec =
      "{\"image_id\":0,\"x\":0,\"y\":0,\"w\":1,\"h\":1,\"fused_score\":1.5,\"rpn_score\":0,\"bcn_score\":0}\n";
  const std::string err = error_of(header + rec, true);
  EXPECT_NE(err.find("f:2:"), std::string::npos) << err;
  EXPECT_NE(err.find("fused_score"), std::string::npos) << err;
}

TEST(Parsers, NeverCrashOnMalformedInput) {
  const std::string manifest = format_manifest({sample_record()});
  const std::string dets = format_detections({{0, 1, 2, 3, 4, 0.5, 0.5, 0.5}, {1, 1, 2, 3, 4, 0.4, 0.5, 0.5}});
  const std::string alphabet = "{}[]\":,.-+eE0123456789 truefalsn\n\\x";
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 3000; ++trial) {
    for (const std::string* base : {&manifest, &dets}) {
      std::string s = *base;
      for (int k = 1 + static_cast<int>(rng() % 4); k > 0; --k) {
        const std::size_t pos = rng() % (s.size() + 1);
        switch (rng() % 3) {
          case 0:
            if (pos < s.size()) s.erase(pos, 1 + rng() % 5);
            break;
          case 1:
            s.insert(pos, 1, alphabet[rng() % alphabet.size()]);
            break;
          default:
            if (pos < s.size()) s[pos] = alphabet[rng() % alphabet.size()];
        }
      }
      try {
        if (base == &manifest) {
          parse_manifest(s);
        } else {
          parse_detections(s);
        }
      } catch (const DataError&) {
      } catch (const std::exception& e) {
        FAIL() << "unexpected " << typeid(e).name() << ": " << e.what() << "\ninput: " << s;
      }
    }
  }
}

TEST(Parsers, ExtremeNumbersAreNamedErrors) {
  const std::string header = "{\"format\":\"sds-detections\",\"version\":1}\n";
  for (const char* id : {"-1", "1e400", "18446744073709551616", "0.5"}) {
    const std::string rec = std::string("{\"image_id\":") + id +
                            ",\"x\":0,\"y\":0,\"w\":1,\"h\":1,\"fused_score\":0,\"rpn_score\":0,\"bcn_score\":0}\n";
    EXPECT_THROW(parse_detections(header + rec), DataError) << id;
  }
  EXPECT_THROW(parse_manifest("{\"image_path\":\"a\",\"image_w\":99999999999,\"image_h\":3,\"annotations\":[]}"),
               DataError);
}

TEST(Pgm, RoundTripAndErrors) {
  GrayImage img{3, 2, {0, 1, 2, 253, 254, 255}};
  const fs::path p = scratch("img.pgm");
  write_pgm(img, p);
  EXPECT_EQ(read_pgm(p), img);
  EXPECT_EQ(read_text_file(p), std::string("P5\n3 2\n255\n") + std::string("\x00\x01\x02\xfd\xfe\xff", 6));
  write_text_file(p, "P5\n3 2\n255\n\x01");
  EXPECT_THROW(read_pgm(p), DataError);
  write_text_file(p, "P2\n3 2\n255\n");
  EXPECT_THROW(read_pgm(p), DataError);
  fs::remove(p);
}

TEST(Pgm, TensorConversion) {
  const GrayImage img{2, 1, {0, 255}};
  const Tensor t = img.to_tensor();
  EXPECT_EQ(t.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(t[1], 1.0);
  EXPECT_EQ(GrayImage::from_tensor(t), img);
  EXPECT_EQ(GrayImage::from_tensor(Tensor({1, 2}, {-0.5, 0.5})).pixels, (std::vector<std::uint8_t>{0, 128}));
}

TEST(KeyValues, ParsesAndReportsLines) {
  const auto kv = parse_key_values("# comment\n\nseed = 7\n  name=abc  \n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0].key, "seed");
  EXPECT_EQ(kv[0].value, "7");
  EXPECT_EQ(kv[0].line, 3);
  EXPECT_EQ(kv[1].key, "name");
  EXPECT_EQ(kv[1].value, "abc");
  try {
    parse_key_values("a = 1\nbroken\n", "cfg");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg:2:"), std::string::npos);
  }
  EXPECT_THROW(parse_key_values("a = 1\na = 2\n"), DataError);
}

TEST(FormatDouble, SeventeenDigitsRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5, 123456789.125, std::numeric_limits<double>::min()}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

}  // namespace
}  // namespace sds
