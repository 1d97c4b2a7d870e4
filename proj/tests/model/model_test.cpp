#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "embattack/model/checkpoint.h"
#include "embattack/model/generate.h"
#include "embattack/model/params.h"
#include "embattack/model/tokenizer.h"
#include "embattack/model/train.h"
#include "embattack/model/transformer.h"
#include "embattack/numerics/errors.h"
#include "embattack/numerics/ops.h"

namespace embattack::model {
namespace {

using numerics::Tape;

ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.max_seq_len = 32;
  c.seed = seed;
  return c;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(TokenizerTest, ByteIdentity) {
  const Tokenizer tk;
  EXPECT_TRUE(tk.tokenize("").empty());
  EXPECT_EQ(tk.tokenize("ab"), (std::vector<TokenId>{97, 98}));
  EXPECT_EQ(tk.vocab_size(), 260u);
}

TEST(TokenizerTest, RandomByteStringsRoundTrip) {
  const Tokenizer tk;
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    std::string s(rng() % 64, '\0');
    for (char& c : s) c = static_cast<char>(rng() % 256);
    ASSERT_EQ(tk.detokenize(tk.tokenize(s)), s);
  }
}

TEST(TokenizerTest, DetokenizeDropsSpecials) {
  const Tokenizer tk;
  const std::vector<TokenId> ids{kBos, 104, kUser, 105, kAssistant, kEos};
  EXPECT_EQ(tk.detokenize(ids), "hi");
}

TEST(ChatTemplateTest, RendersTurns) {
  const ChatTemplate chat;
  EXPECT_EQ(chat.user_prefix("a"), (std::vector<TokenId>{kBos, kUser, 97}));
  EXPECT_EQ(chat.assistant_turn("b"), (std::vector<TokenId>{kAssistant, 98}));
  std::size_t assistant = 0;
  EXPECT_EQ(chat.dialogue("a", "b", &assistant),
            (std::vector<TokenId>{kBos, kUser, 97, kAssistant, 98, kEos}));
  EXPECT_EQ(assistant, 3u);
}

TEST(ConfigTest, ValidatesAndRoundTripsJson) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.n_layers, 4u);
  EXPECT_EQ(c.d_model, 128u);
  EXPECT_EQ(c.max_seq_len, 256u);
  EXPECT_EQ(c.init_std, 0.02);
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(InitParamsTest, SameSeedIsBitIdenticalDifferentSeedDiffers) {
  const ModelParams a = init_params(small_config(1));
  const ModelParams b = init_params(small_config(1));
  const ModelParams c = init_params(small_config(2));
  const auto ta = a.named_tensors();
  const auto tb = b.named_tensors();
  const auto tc = c.named_tensors();
  bool any_differs = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(values(ta[i].second), values(tb[i].second)) << ta[i].first;
    any_differs = any_differs || values(ta[i].second) != values(tc[i].second);
  }
  EXPECT_TRUE(any_differs);
}

TEST(InitParamsTest, LayoutMatchesExpected) {
  const ModelConfig config = small_config();
  const auto named = init_params(config).named_tensors();
  const auto expected = expected_layout(config);
  ASSERT_EQ(named.size(), expected.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    EXPECT_EQ(named[i].first, expected[i].first);
    EXPECT_EQ(named[i].second.shape(), expected[i].second);
  }
}

TEST(InitParamsTest, EmbeddingMomentsMatchDeclaredDistribution) {
  const ModelParams p = init_params(ModelConfig{});
  const auto d = p.token_embedding.data();
  const double n = static_cast<double>(d.size());
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= n;
  EXPECT_LT(std::abs(mean), 3.0 * 0.02 / std::sqrt(n));
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  EXPECT_NEAR(std::sqrt(var / n), 0.02, 0.001);
  EXPECT_EQ(values(p.final_gain), std::vector<double>(p.final_gain.numel(), 1.0));
  EXPECT_EQ(values(p.final_bias), std::vector<double>(p.final_bias.numel(), 0.0));
  EXPECT_TRUE(p.all_finite());
}

TEST(ForwardTest, ShapeAndTokenEmbeddingConsistency) {
  const ModelParams p = init_params(ModelConfig{});
  const std::vector<TokenId> ids{kBos, kUser, 104, 105, 33, kAssistant, 83};
  Tape tape;
  const Tensor logits = forward_tokens(tape, p, ids);
  EXPECT_EQ(logits.shape(), (numerics::Shape{7, 260}));
  const Tensor via_embeddings = forward_embeddings(tape, p, embed_tokens(tape, p, ids));
  EXPECT_EQ(values(logits), values(via_embeddings));
}

TEST(ForwardTest, OutputRowsSelectSubset) {
  const ModelParams p = init_params(small_config());
  const std::vector<TokenId> ids{kBos, 1, 2, 3, 4};
  Tape tape;
  const Tensor all = forward_tokens(tape, p, ids);
  const std::vector<std::size_t> rows{1, 4};
  const Tensor some = forward_tokens(tape, p, ids, rows);
  ASSERT_EQ(some.shape(), (numerics::Shape{2, 260}));
  // Different row counts take different GEMM blocking, so equality is to rounding.
  for (std::size_t v = 0; v < 260; ++v) {
    EXPECT_NEAR(some.at(0, v), all.at(1, v), 1e-12);
    EXPECT_NEAR(some.at(1, v), all.at(4, v), 1e-12);
  }
}

TEST(ForwardTest, UntrainedCrossEntropyNearLogVocab) {
  const ModelParams p = init_params(ModelConfig{});
  std::mt19937_64 rng(5);
  std::vector<TokenId> ids(32), targets(32);
  for (auto& id : ids) id = static_cast<TokenId>(rng() % 256);
  for (auto& t : targets) t = static_cast<TokenId>(rng() % 260);
  Tape tape;
  const double loss = numerics::cross_entropy(tape, forward_tokens(tape, p, ids), targets).item();
  EXPECT_GT(loss, std::log(260.0) - 1.0);
  EXPECT_LT(loss, std::log(260.0) + 1.0);
}

TEST(ForwardTest, TooLongThrows) {
  const ModelParams p = init_params(small_config());
  const std::vector<TokenId> ids(33, 1);
  Tape tape;
  EXPECT_THROW(forward_tokens(tape, p, ids), LengthError);
}

TEST(ForwardTest, CausalMaskingIgnoresLaterRows) {
  ModelConfig config = small_config();
  config.init_std = 0.3;
  const ModelParams p = init_params(config);
  const std::vector<TokenId> ids{kBos, 5, 6, 7, 8};
  Tape tape;
  const Tensor base = embed_tokens(tape, p, ids);
  Tensor perturbed = base.clone();
  for (std::size_t c = 0; c < 16; ++c) perturbed.mutable_data()[3 * 16 + c] += 1.0;
  const Tensor a = forward_embeddings(tape, p, base);
  const Tensor b = forward_embeddings(tape, p, perturbed);
  for (std::size_t row = 0; row < 3; ++row) {
    for (std::size_t v = 0; v < 260; ++v) ASSERT_EQ(a.at(row, v), b.at(row, v));
  }
  EXPECT_NE(a.at(3, 0), b.at(3, 0));
}

TEST(ForwardTest, GradientReachesOnlyEarlierRows) {
  ModelConfig config = small_config();
  config.init_std = 0.3;
  const ModelParams p = init_params(config);
  const std::vector<TokenId> ids{kBos, 5, 6, 7, 8};
  Tape tape;
  Tensor x = embed_tokens(tape, p, ids).clone(true);
  const std::vector<std::size_t> rows{2};
  const std::vector<int> target{9};
  tape.backward(numerics::cross_entropy(tape, forward_embeddings(tape, p, x, rows), target));
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    (i < 3 * 16 ? early : late) += std::abs(x.grad()[i]);
  }
  EXPECT_GT(early, 0.0);
  EXPECT_EQ(late, 0.0);
}

TEST(GenerateTest, IncrementalMatchesFullForward) {
  ModelConfig config = small_config();
  config.init_std = 0.3;
  const ModelParams p = init_params(config);
  const std::vector<TokenId> ids{kBos, kUser, 10, 20, 30, kAssistant};
  IncrementalDecoder decoder(p);
  std::vector<double> last;
  for (TokenId id : ids) last = decoder.feed_token(id);
  Tape tape;
  const Tensor full = forward_tokens(tape, p, ids);
  for (std::size_t v = 0; v < 260; ++v) EXPECT_NEAR(last[v], full.at(ids.size() - 1, v), 1e-12);
  EXPECT_EQ(decoder.position(), ids.size());
}

TEST(GenerateTest, GreedyIsDeterministicAndBounded) {
  ModelConfig config = small_config();
  config.init_std = 0.3;
  const ModelParams p = init_params(config);
  Tape tape;
  const std::vector<TokenId> ids{kBos, kUser, 10, kAssistant};
  const Tensor prefix = embed_tokens(tape, p, ids);
  EXPECT_TRUE(generate_greedy(p, prefix, 0).empty());
  const auto a = generate_greedy(p, prefix, 8);
  EXPECT_EQ(a, generate_greedy(p, prefix, 8));
  EXPECT_LE(a.size(), 8u);
  EXPECT_THROW(generate_greedy(p, prefix, 29), LengthError);
}

TEST(GenerateTest, ArgmaxPrefersLowestIndexOnTies) {
  const std::vector<double> logits{0.5, 2.0, 2.0, 1.0};
  EXPECT_EQ(argmax(logits), 1);
}

TEST(TrainTest, ExampleMasks) {
  const TrainingExample plain = plain_text_example({kBos, 1, 2, kEos});
  EXPECT_EQ(plain.loss_mask, (std::vector<bool>{true, true, true}));
  const TrainingExample dialog = dialogue_example({kBos, kUser, 1, kAssistant, 2, kEos}, 3);
  EXPECT_EQ(dialog.loss_mask, (std::vector<bool>{false, false, false, true, true}));
}

TEST(TrainTest, OverfitsSingleSequence) {
  ModelParams p = init_params(small_config());
  const Tokenizer tk;
  std::vector<TokenId> ids{kBos};
  for (TokenId id : tk.tokenize("the cat sat on the mat")) ids.push_back(id);
  ids.push_back(kEos);
  const std::vector<TrainingExample> corpus(4, plain_text_example(ids));
  TrainConfig config;
  config.epochs = 150;
  config.batch_size = 4;
  config.learning_rate = 1e-2;
  const TrainReport report = train(p, corpus, config);
  EXPECT_LT(report.final_loss, 0.05);
  EXPECT_LT(evaluate_loss(p, corpus), 0.05);
  EXPECT_TRUE(p.all_finite());
}

TEST(TrainTest, FirstEpochBeatsInitAndIsReproducible) {
  const Tokenizer tk;
  std::vector<TrainingExample> corpus;
  for (const char* text : {"alpha beta gamma", "beta gamma delta", "gamma delta alpha"}) {
    std::vector<TokenId> ids{kBos};
    for (TokenId id : tk.tokenize(text)) ids.push_back(id);
    corpus.push_back(plain_text_example(ids));
  }
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = 1;
  config.learning_rate = 3e-3;
  ModelParams a = init_params(small_config());
  ModelParams b = init_params(small_config());
  const double initial = evaluate_loss(a, corpus);
  const TrainReport report = train(a, corpus, config);
  train(b, corpus, config);
  EXPECT_EQ(report.initial_loss, initial);
  EXPECT_LT(report.epoch_losses.front(), initial);
  EXPECT_LT(evaluate_loss(a, corpus), initial);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(TrainTest, RejectsOverlongSequence) {
  ModelParams p = init_params(small_config());
  const std::vector<TrainingExample> corpus{plain_text_example(std::vector<TokenId>(40, 1))};
  EXPECT_THROW(train(p, corpus, TrainConfig{}), LengthError);
}

TEST(TrainTest, DivergenceThrows) {
  ModelParams p = init_params(small_config());
  p.token_embedding.mutable_data()[0] = std::nan("");
  const std::vector<TrainingExample> corpus{plain_text_example({0, 1, 2})};
  TrainConfig config;
  config.epochs = 1;
  EXPECT_THROW(train(p, corpus, config), TrainingDivergence);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("embattack_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string write_bytes(const std::string& name, const std::string& bytes) {
    const auto path = dir_ / name;
    std::ofstream(path, std::ios::binary) << bytes;
    return path.string();
  }

  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripReproducesLogitsBitExactly) {
  ModelConfig config = small_config();
  config.init_std = 0.3;
  const ModelParams p = init_params(config);
  const auto path = dir_ / "a.ckpt";
  save_checkpoint(p, path);
  const ModelParams q = load_checkpoint(path);
  EXPECT_EQ(q.config, p.config);
  const std::vector<TokenId> ids{kBos, kUser, 72, 105, kAssistant};
  Tape tape;
  EXPECT_EQ(values(forward_tokens(tape, p, ids)), values(forward_tokens(tape, q, ids)));
  save_checkpoint(q, dir_ / "b.ckpt");
  EXPECT_EQ(file_sha256_hex(path), file_sha256_hex(dir_ / "b.ckpt"));
}

TEST_F(CheckpointTest, CorruptionYieldsErrors) {
  const std::string good = serialize_checkpoint(init_params(small_config()));
  EXPECT_THROW(deserialize_checkpoint(""), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT" + good.substr(8)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 8)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(good + "x"), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, 20)), CheckpointError);
  std::string bad_header = good;
  bad_header[16] = '#';
  EXPECT_THROW(deserialize_checkpoint(bad_header), CheckpointError);
  std::string huge_length = good;
  for (int i = 8; i < 16; ++i) huge_length[i] = '\xff';
  EXPECT_THROW(deserialize_checkpoint(huge_length), CheckpointError);
  EXPECT_THROW(load_checkpoint(write_bytes("t.ckpt", good.substr(0, good.size() / 2))), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), CheckpointError);
}

TEST_F(CheckpointTest, EveryTruncationIsRejected) {
  const std::string good = serialize_checkpoint(init_params(small_config()));
  for (std::size_t n = 0; n < good.size(); n += 97) {
    EXPECT_THROW(deserialize_checkpoint(good.substr(0, n)), CheckpointError) << n;
  }
}

TEST(Sha256Test, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace embattack::model
