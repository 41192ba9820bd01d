#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "magma/checkpoint.hpp"
#include "magma/config.hpp"
#include "magma/io.hpp"
#include "support/micro.hpp"

namespace magma {
namespace {

// Fresh scratch directory per test, removed afterwards.
class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / fmt::format("magma_io_{}_{}", info->test_suite_name(), info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }
  void write(const std::string& name, std::string_view bytes) const {
    std::ofstream(path(name), std::ios::binary) << bytes;
  }

  template <typename F>
  static std::string error_of(F&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.what();
    }
    return "<no error>";
  }

  fs::path dir_;
};

using Ppm = TempDir;

TEST_F(Ppm, SingleRedPixel) {
  write("red.ppm", std::string("P6\n1 1\n255\n") + std::string("\xff\x00\x00", 3));
  const auto t = read_image<double>(path("red.ppm"));
  EXPECT_EQ(t.shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST_F(Ppm, CommentsAndRoundTrip) {
  write("c.ppm", std::string("P6 # a comment\n2 1\n# another\n255\n") + std::string("\x01\x02\x03\x04\x05\x06", 6));
  const auto img = read_ppm(path("c.ppm"));
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.rgb, (std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6}));
  write_ppm(path("out.ppm"), img);
  EXPECT_EQ(read_ppm(path("out.ppm")).rgb, img.rgb);
  EXPECT_EQ(encode_ppm(img), read_file(path("out.ppm")));
}

TEST_F(Ppm, Errors) {
  write("p5.ppm", "P5\n1 1\n255\n\x00");
  EXPECT_NE(error_of([&] { read_ppm(path("p5.ppm")); }).find("unsupported format"), std::string::npos);
  write("short.ppm", "P6\n2 2\n255\n\x01\x02\x03");
  EXPECT_NE(error_of([&] { read_ppm(path("short.ppm")); }).find("trunc"), std::string::npos);
  write("max.ppm", std::string("P6\n1 1\n65535\n") + std::string(6, '\0'));
  EXPECT_NE(error_of([&] { read_ppm(path("max.ppm")); }).find("maxval"), std::string::npos);
  EXPECT_THROW(read_ppm(path("missing.ppm")), DataError);
  EXPECT_THROW(decode_ppm("P6\nx y\n255\n", "inline"), DataError);
}

using Mgt = TempDir;

TEST_F(Mgt, RoundTripAndConversion) {
  std::mt19937_64 rng(1);
  const auto t = testing::random_tensor({3, 4, 2}, rng);
  write_mgt(path("t.mgt"), t);
  const auto back = read_mgt<double>(path("t.mgt"));
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(tensor_crc(back), tensor_crc(t));
  const auto f = read_mgt<float>(path("t.mgt"));
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(f.data()[i], static_cast<float>(t.data()[i]));
  const auto blob = decode_mgt(read_file(path("t.mgt")), "t.mgt");
  EXPECT_EQ(blob.dtype, DType::f64);
  EXPECT_EQ(blob.payload.size(), 24 * sizeof(double));
}

TEST_F(Mgt, RejectsCorruptHeaders) {
  const auto bytes = encode_mgt(Tensor<float>::zeros({2, 2}));
  EXPECT_THROW(decode_mgt("XGT1" + bytes.substr(4), "x"), DataError);
  EXPECT_THROW(decode_mgt(bytes.substr(0, bytes.size() - 1), "x"), DataError);
  EXPECT_THROW(decode_mgt(bytes + "extra", "x"), DataError);
}

TEST(Crc, KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of(s), 0xCBF43926u);
}

using Manifest = TempDir;

TEST_F(Manifest, CaptionLinesInOrder) {
  write("a.ppm", encode_ppm(Image{1, 1, {1, 2, 3}}));
  write("m.jsonl", R"({"image": "a.ppm", "caption": "one"}
{"image": "a.ppm", "caption": "two"}

{"image": "a.ppm", "caption": "three"}
)");
  const auto recs = load_manifest(path("m.jsonl"), ManifestKind::caption);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].caption, "one");
  EXPECT_EQ(recs[1].caption, "two");
  EXPECT_EQ(recs[2].caption, "three");
  EXPECT_EQ(recs[2].line, 4u);
  EXPECT_EQ(recs[0].image, path("a.ppm"));
}

TEST_F(Manifest, MalformedLineIsNamed) {
  write("a.ppm", encode_ppm(Image{1, 1, {1, 2, 3}}));
  write("m.jsonl", "{\"image\": \"a.ppm\", \"caption\": \"x\"}\n{\"image\": \"a.ppm\", \"caption\": \n");
  const auto msg = error_of([&] { load_manifest(path("m.jsonl"), ManifestKind::caption); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST_F(Manifest, QaAnswersPreserved) {
  write("a.ppm", encode_ppm(Image{1, 1, {1, 2, 3}}));
  ManifestRecord r;
  r.image = "a.ppm";
  r.question = "What?";
  for (int i = 0; i < 10; ++i) r.answers.push_back("ans" + std::to_string(i));
  write("qa.jsonl", manifest_line(r, ManifestKind::qa) + "\n");
  const auto recs = load_manifest(path("qa.jsonl"), ManifestKind::qa);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].answers, r.answers);
  EXPECT_EQ(recs[0].question, "What?");
}

TEST_F(Manifest, KindMismatchAndMissingImage) {
  write("a.ppm", encode_ppm(Image{1, 1, {1, 2, 3}}));
  write("cap.jsonl", R"({"image": "a.ppm", "caption": "x"})");
  EXPECT_THROW(load_manifest(path("cap.jsonl"), ManifestKind::qa), DataError);
  write("gone.jsonl", R"({"image": "nope.ppm", "caption": "x"})");
  EXPECT_NE(error_of([&] { load_manifest(path("gone.jsonl"), ManifestKind::caption); }).find("nope.ppm"),
            std::string::npos);
  write("bad.jsonl", R"({"image": "a.ppm", "hypothesis": "h", "label": 3})");
  EXPECT_THROW(load_manifest(path("bad.jsonl"), ManifestKind::entailment), DataError);
  EXPECT_THROW(load_manifest(path("absent.jsonl"), ManifestKind::caption), DataError);
}

TEST(Config, AdapterRows) {
  auto cfg = RunConfig::parse("d_model = 48\nadapters = s 1 12 6\n");
  ASSERT_TRUE(cfg.model.adapters);
  EXPECT_EQ(cfg.model.adapters->type, AdapterType::sequential);
  EXPECT_EQ(cfg.model.adapters->lambda, LambdaMode::fixed);
  EXPECT_EQ(cfg.model.adapters->attn_downsample, 12u);
  EXPECT_EQ(cfg.model.adapters->ff_downsample, 6u);
  EXPECT_FALSE(RunConfig::parse("adapters = --\n").model.adapters);
  EXPECT_EQ(RunConfig::parse("# comment\n\nadapters = p t -- 4  # trailing\n").model.adapters->notation(), "p t -- 4");
}

TEST(Config, Errors) {
  EXPECT_THROW(RunConfig::parse("mystery = 3\n"), UsageError);
  EXPECT_THROW(RunConfig::parse("d_model = 64\nd_model = 32\n"), UsageError);
  EXPECT_THROW(RunConfig::parse("d_model 64\n"), UsageError);
  EXPECT_THROW(RunConfig::parse("d_model = 64\nadapters = s 1 -- 7\n"), UsageError);
  EXPECT_THROW(RunConfig::parse("d_model = sixty\n"), UsageError);
}

RunConfig random_config(std::mt19937_64& rng) {
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  std::uniform_real_distribution<double> unit(0, 1);
  RunConfig c;
  c.model.lm.n_heads = std::size_t{1} << pick(3);
  c.model.lm.d_model = c.model.lm.n_heads * 2 * (1 + pick(8));
  c.model.lm.n_layers = 1 + pick(6);
  c.model.lm.context = 160 + pick(600);
  c.model.lm.bos = pick(2);
  c.model.lm.vocab = 260 + pick(1000);
  c.model.encoder.kind = pick(2) ? EncoderConfig::Kind::conv : EncoderConfig::Kind::passthrough;
  c.model.encoder.channels.assign(1 + pick(4), 0);
  for (auto& ch : c.model.encoder.channels) ch = 1 + pick(40);
  c.model.encoder.image_size = std::size_t{1} << (c.model.encoder.channels.size() + pick(3));
  c.model.encoder.grid_size = 1 + pick(12);
  c.model.encoder.grid_channels = 1 + pick(64);
  c.model.prefix.mode = pick(2) ? PrefixConfig::Mode::grid : PrefixConfig::Mode::pooled;
  c.model.prefix.pooled_length = 1 + pick(4);
  c.model.prefix.dropout = unit(rng) * 0.9;
  if (pick(4)) {
    AdapterConfig a;
    a.type = pick(2) ? AdapterType::sequential : AdapterType::parallel;
    a.lambda = pick(2) ? LambdaMode::fixed : LambdaMode::trained;
    const std::size_t d = c.model.lm.d_model;
    std::vector<std::size_t> divisors;
    for (std::size_t f = 1; f <= d; ++f)
      if (d % f == 0) divisors.push_back(f);
    const auto which = 1 + pick(3);
    if (which & 1) a.attn_downsample = divisors[pick(divisors.size())];
    if (which & 2) a.ff_downsample = divisors[pick(divisors.size())];
    c.model.adapters = a;
  }
  c.train.batch_size = 1 + pick(64);
  c.train.lr_encoder = unit(rng) * 1e-4;
  c.train.lr_head = unit(rng) * 1e-2;
  c.train.total_steps = pick(100000);
  c.train.seed = rng();
  c.train.weight_decay = pick(2) ? 0.0 : unit(rng);
  const std::vector<std::string> prefixes{"", "A picture of", "Caption:", "say \"hi\" # not a comment"};
  c.caption_prefix = prefixes[pick(prefixes.size())];
  c.pretrain_steps = pick(5000);
  c.pretrain_lr = unit(rng) * 1e-2;
  c.vocab_file = pick(2) ? "" : "words with space.txt";
  return c;
}

TEST(Config, RandomRoundTrip) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const auto c = random_config(rng);
    const auto text = c.render();
    const auto back = RunConfig::parse(text);
    EXPECT_EQ(back, c) << text;
    EXPECT_EQ(back.render(), text);
  }
}

TEST(Config, ModelCompatibilityNamesTheField) {
  ModelConfig a, b;
  b.lm.d_model = 64;
  try {
    check_model_compatible(a, b);
    FAIL() << "no error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("d_model: checkpoint has 128, config has 64"), std::string::npos) << e.what();
  }
  b = a;
  b.encoder.image_size = 32;
  EXPECT_THROW(check_model_compatible(a, b), DataError);
  EXPECT_NO_THROW(check_model_compatible(a, b, true));
}

RunConfig micro_run(std::size_t variant) {
  RunConfig c;
  c.model = testing::micro_config(variant);
  return c;
}

using Checkpoint = TempDir;

TEST_F(Checkpoint, RoundTripKeepsEveryCrc) {
  const auto rc = micro_run(1);
  MultimodalModel<double> model(rc.model, 3);
  std::mt19937_64 rng(3);
  testing::randomize_parameters(model.parameters(), rng);
  write_checkpoint(model.parameters(), rc, path("ck"));

  const auto manifest = read_checkpoint_manifest(path("ck"));
  EXPECT_EQ(manifest.config, rc);
  EXPECT_EQ(manifest.tensors.size(), model.parameters().size());
  for (const auto& [name, t] : model.parameters()) {
    const auto* e = manifest.find(name);
    ASSERT_NE(e, nullptr) << name;
    EXPECT_EQ(e->crc, tensor_crc(t)) << name;
    EXPECT_EQ(e->shape, t.shape());
  }
  const auto loaded = read_checkpoint<double>(path("ck"));
  for (const auto& [name, t] : model.parameters()) EXPECT_EQ(tensor_crc(loaded->parameters().get(name)), tensor_crc(t));
}

TEST_F(Checkpoint, ReloadGivesIdenticalLogits) {
  const auto rc = micro_run(3);
  MultimodalModel<float> model(rc.model, 4);
  std::mt19937_64 rng(4);
  testing::randomize_parameters(model.parameters(), rng);
  write_checkpoint(model.parameters(), rc, path("ck"));
  const auto loaded = read_checkpoint<float>(path("ck"));
  const auto image = testing::random_image<float>(8, rng);
  PromptSequence<float> p;
  p.add_prefix(model.image_prefix(image));
  p.add_tokens({1, 2, 3});
  PromptSequence<float> q;
  q.add_prefix(loaded->image_prefix(image));
  q.add_tokens({1, 2, 3});
  const auto a = model.lm().lm_logits(p, model.adapters()), b = loaded->lm().lm_logits(q, loaded->adapters());
  ASSERT_EQ(a.numel(), b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST_F(Checkpoint, ByteDeterministic) {
  const auto rc = micro_run(0);
  MultimodalModel<float> model(rc.model, 5);
  write_checkpoint(model.parameters(), rc, path("a"));
  write_checkpoint(model.parameters(), rc, path("b"));
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(path("a"))) {
    const auto name = entry.path().filename();
    EXPECT_EQ(read_file(entry.path()), read_file(path("b") / name)) << name;
    ++files;
  }
  EXPECT_EQ(files, model.parameters().size() + 1);
}

TEST_F(Checkpoint, FlippedByteNamesTheTensor) {
  const auto rc = micro_run(0);
  MultimodalModel<float> model(rc.model, 6);
  write_checkpoint(model.parameters(), rc, path("ck"));
  const auto manifest = read_checkpoint_manifest(path("ck"));
  const auto* entry = manifest.find("prefix.proj.weight");
  ASSERT_NE(entry, nullptr);
  const auto file = path("ck") / entry->file;
  auto bytes = read_file(file);
  bytes[bytes.size() - 3] ^= 0x10;
  write(fs::relative(file, dir_).string(), bytes);
  const auto msg = error_of([&] { read_checkpoint<float>(path("ck")); });
  EXPECT_NE(msg.find("prefix.proj.weight"), std::string::npos) << msg;
}

TEST_F(Checkpoint, DimensionMismatchIsRejected) {
  auto rc = micro_run(0);
  MultimodalModel<float> big(rc.model, 7);
  write_checkpoint(big.parameters(), rc, path("ck"));
  auto small_cfg = rc.model;
  small_cfg.lm.d_model = 4;
  small_cfg.adapters.reset();
  MultimodalModel<float> small(small_cfg, 7);
  const auto msg = error_of([&] { load_checkpoint(small.parameters(), path("ck"), true, is_frozen_name); });
  EXPECT_NE(msg.find("lm."), std::string::npos) << msg;
  EXPECT_NE(msg.find("(8, 8)"), std::string::npos) << msg;
}

TEST_F(Checkpoint, MissingTensorIsRejected) {
  const auto rc = micro_run(0);
  MultimodalModel<float> model(rc.model, 8);
  write_checkpoint(model.parameters(), rc, path("ck"));
  fs::remove(path("ck") / read_checkpoint_manifest(path("ck")).find("lm.embed")->file);
  EXPECT_THROW(read_checkpoint<float>(path("ck")), DataError);
}

using Frozen = TempDir;

TEST_F(Frozen, SameCheckpointPasses) {
  const auto rc = micro_run(0);
  MultimodalModel<float> model(rc.model, 9);
  write_checkpoint(model.parameters(), rc, path("a"));
  const auto r = verify_frozen(path("a"), path("a"));
  EXPECT_TRUE(r.pass);
  EXPECT_GT(r.compared, 0u);
  EXPECT_TRUE(r.changed.empty());
}

TEST_F(Frozen, AdapterChangesPassLmChangesFail) {
  const auto rc = micro_run(0);
  MultimodalModel<float> model(rc.model, 10);
  write_checkpoint(model.parameters(), rc, path("base"));
  model.parameters().get("adapter.0.attn.up").mutable_data()[0] += 1;
  model.parameters().get("encoder.conv0.bias").mutable_data()[0] += 1;
  write_checkpoint(model.parameters(), rc, path("adapted"));
  EXPECT_TRUE(verify_frozen(path("base"), path("adapted")).pass);

  model.parameters().get("lm.block0.attn.q").mutable_data()[3] += 1e-6f;
  model.parameters().get("lm.head.bias").mutable_data()[0] -= 1;
  write_checkpoint(model.parameters(), rc, path("drifted"));
  const auto r = verify_frozen(path("base"), path("drifted"));
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.changed, (std::vector<std::string>{"lm.block0.attn.q", "lm.head.bias"}));
}

TEST_F(Frozen, NameSetMismatchIsAnError) {
  const auto rc1 = micro_run(0), rc2 = micro_run(1);  // one vs two layers
  MultimodalModel<float> a(rc1.model, 11), b(rc2.model, 11);
  write_checkpoint(a.parameters(), rc1, path("a"));
  write_checkpoint(b.parameters(), rc2, path("b"));
  EXPECT_THROW(verify_frozen(path("a"), path("b")), DataError);
}

TEST(FrozenName, OnlyLmTensors) {
  EXPECT_TRUE(is_frozen_name("lm.embed"));
  EXPECT_FALSE(is_frozen_name("adapter.0.ff.up"));
  EXPECT_FALSE(is_frozen_name("cls.weight"));
}

}  // namespace
}  // namespace magma
