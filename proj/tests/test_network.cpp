#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "eslab/network.hpp"
#include "eslab/optim.hpp"
#include "testutil.hpp"

using namespace eslab;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

std::vector<double> all_params_flat(const Network& net) {
  std::vector<double> out;
  for (const auto& p : net.params()) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

}  // namespace

TEST(Build, SameSeedIdenticalParameterBytes) {
  std::vector<LayerSpec> spec = {LayerSpec::dense(64, 32), LayerSpec::relu(),
                                 LayerSpec::dense(32, 10)};
  Network a({64}, spec, 10, 7);
  Network b({64}, spec, 10, 7);
  ASSERT_EQ(a.params().size(), b.params().size());
  EXPECT_EQ(all_params_flat(a), all_params_flat(b));
}

TEST(Build, DifferentSeedsDiffer) {
  std::vector<LayerSpec> spec = {LayerSpec::dense(64, 32), LayerSpec::relu(),
                                 LayerSpec::dense(32, 10)};
  Network a({64}, spec, 10, 7);
  Network b({64}, spec, 10, 8);
  EXPECT_NE(all_params_flat(a), all_params_flat(b));
}

TEST(Build, IncompatibleAdjacentShapesThrow) {
  EXPECT_THROW(Network({64}, {LayerSpec::dense(64, 32), LayerSpec::dense(16, 10)}, 10, 1),
               std::invalid_argument);
  // conv after a vector shape
  EXPECT_THROW(Network({64}, {LayerSpec::conv(1, 4, 3)}, 10, 1), std::invalid_argument);
  // final width disagrees with the declared output width
  EXPECT_THROW(Network({64}, {LayerSpec::dense(64, 12)}, 10, 1), std::invalid_argument);
}

TEST(Build, ZeroBiases) {
  Network net({8}, {LayerSpec::dense(8, 4)}, 4, 3);
  const auto& b = net.params()[1];
  for (double v : b.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ConvStackOn1x8x8YieldsTenLogits) {
  Network net = make_model("cnn-small", {1, 8, 8}, 10, 11);
  Rng rng(5);
  Tensor x = Tensor::randn({3, 1, 8, 8}, rng);
  Tensor logits = net.forward(x);
  EXPECT_EQ(logits.shape(), (Shape{3, 10}));
  EXPECT_TRUE(all_finite(logits));
}

TEST(Forward, ZeroFinalDenseGivesUniformSoftmax) {
  Network net = make_model("mlp-small", {8}, 4, 2);
  auto& params = net.params();
  // last dense layer holds the final weight/bias pair
  for (double& v : params[params.size() - 2].data()) v = 0.0;
  for (double& v : params[params.size() - 1].data()) v = 0.0;
  Rng rng(9);
  Tensor x = Tensor::randn({5, 8}, rng);
  Tensor logits = net.forward(x);
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  Tensor probs = softmax_rows(logits);
  for (double v : probs.data()) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(Forward, IdenticalRowsGiveIdenticalLogits) {
  Network net = make_model("mlp-small", {6}, 3, 4);
  std::vector<double> row = {0.3, -1.2, 0.7, 0.0, 2.0, -0.5};
  std::vector<double> batch;
  for (int i = 0; i < 4; ++i) batch.insert(batch.end(), row.begin(), row.end());
  Tensor logits = net.forward(Tensor({4, 6}, batch));
  for (int64_t i = 1; i < 4; ++i)
    for (int64_t j = 0; j < 3; ++j)
      EXPECT_EQ(logits.data()[i * 3 + j], logits.data()[j]);
}

TEST(Forward, HandSetWeightsReproduceHandComputedLogits) {
  Network net({2}, {LayerSpec::dense(2, 2), LayerSpec::relu(), LayerSpec::dense(2, 2)}, 2, 0);
  auto& p = net.params();
  p[0].data() = {1.0, -1.0, 2.0, 0.5};   // W1 [in=2, out=2]
  p[1].data() = {0.1, -0.2};             // b1
  p[2].data() = {0.5, -1.0, 1.0, 1.0};   // W2
  p[3].data() = {0.0, 0.3};              // b2
  // x = [1, 2]: hidden pre = [1*1+2*2+0.1, -1+1.0-0.2] = [5.1, -0.2]
  // relu -> [5.1, 0]; logits = [5.1*0.5, 5.1*(-1.0)+0.3] = [2.55, -4.8]
  Tensor logits = net.forward(Tensor({1, 2}, {1.0, 2.0}));
  EXPECT_NEAR(logits.data()[0], 2.55, 1e-12);
  EXPECT_NEAR(logits.data()[1], -4.8, 1e-12);
}

TEST(Forward, ShapeMismatchThrows) {
  Network net = make_model("mlp-small", {8}, 4, 2);
  Rng rng(1);
  EXPECT_THROW(net.forward(Tensor::randn({3, 7}, rng)), std::invalid_argument);
  EXPECT_THROW(net.forward(Tensor::randn({3, 1, 8, 8}, rng)), std::invalid_argument);
}

TEST(Forward, FeatureTapShapesMatchLastDenseInput) {
  Network net = make_model("cnn-small", {1, 8, 8}, 10, 11);
  Rng rng(5);
  Tensor x = Tensor::randn({3, 1, 8, 8}, rng);
  Tensor feat = net.forward_features(x, net.last_dense_layer());
  EXPECT_EQ(feat.shape(), (Shape{3, 32}));
}

TEST(Forward, TrainsToLowerLossOnFixedBatch) {
  Network net = make_model("mlp-small", {4}, 3, 6);
  Rng rng(13);
  Tensor x = Tensor::randn({12, 4}, rng);
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(i % 3);
  Tensor target = one_hot(labels, 3);
  Adam opt(net.params(), 0.01);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 30; ++step) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = softmax_cross_entropy(net.forward(x), target);
    if (step == 0) first = loss.item();
    last = loss.item();
    tape.backward(loss);
    opt.step();
  }
  EXPECT_LT(last, first * 0.5);
}

TEST(Zoo, KnownArchitecturesAndErrors) {
  EXPECT_NO_THROW(make_model("mlp-large", {64}, 10, 1));
  EXPECT_NO_THROW(make_model("linear", {64}, 10, 1));
  EXPECT_NO_THROW(make_model("mlp-small", {1, 8, 8}, 10, 1));  // flattens image input
  EXPECT_THROW(make_model("cnn-small", {64}, 10, 1), std::invalid_argument);
  EXPECT_THROW(make_model("resnet50", {64}, 10, 1), std::invalid_argument);
}

TEST(Zoo, SizesAreDistinct) {
  Network small = make_model("mlp-small", {64}, 10, 1);
  Network large = make_model("mlp-large", {64}, 10, 1);
  EXPECT_GT(large.param_count(), 3 * small.param_count());
}

TEST(Clone, IndependentBuffers) {
  Network a = make_model("mlp-small", {6}, 3, 4);
  Network b = a.clone();
  b.params()[0].data()[0] += 1.0;
  EXPECT_NE(a.params()[0].data()[0], b.params()[0].data()[0]);
  // plain copies alias the same buffers
  Network c = a;
  c.params()[0].data()[0] += 1.0;
  EXPECT_EQ(a.params()[0].data()[0], c.params()[0].data()[0]);
}

TEST(Clone, LoadParamsFromRequiresSameArchitecture) {
  Network a = make_model("mlp-small", {6}, 3, 4);
  Network b = make_model("mlp-small", {6}, 3, 9);
  Network c = make_model("mlp-large", {6}, 3, 4);
  EXPECT_NO_THROW(a.load_params_from(b));
  EXPECT_EQ(all_params_flat(a), all_params_flat(b));
  EXPECT_THROW(a.load_params_from(c), std::invalid_argument);
}

TEST(Checkpoint, RoundTripBitIdentical) {
  auto path = tmp_path("eslab_ckpt_roundtrip.bin");
  Network net = make_model("cnn-small", {1, 8, 8}, 10, 21);
  save_checkpoint(net, path.string());
  Network loaded = load_checkpoint(path.string());
  EXPECT_EQ(loaded.class_count(), 10);
  EXPECT_EQ(loaded.input_shape(), net.input_shape());
  EXPECT_EQ(loaded.param_count(), net.param_count());
  EXPECT_EQ(all_params_flat(loaded), all_params_flat(net));
  Rng rng(3);
  Tensor x = Tensor::randn({2, 1, 8, 8}, rng);
  EXPECT_EQ(net.forward(x).data(), loaded.forward(x).data());
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  auto path = tmp_path("eslab_ckpt_trunc.bin");
  Network net = make_model("mlp-small", {8}, 4, 2);
  save_checkpoint(net, path.string());
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  EXPECT_THROW(load_checkpoint(path.string()), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(Checkpoint, BadMagicAndMissingFile) {
  auto path = tmp_path("eslab_ckpt_magic.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint at all";
  }
  EXPECT_THROW(load_checkpoint(path.string()), std::runtime_error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(tmp_path("eslab_no_such_file.bin").string()), std::runtime_error);
}

TEST(Checkpoint, MlpWhereCnnExpectedFailsOnImageBatch) {
  auto path = tmp_path("eslab_ckpt_mlp.bin");
  Network mlp = make_model("mlp-small", {64}, 10, 2);
  save_checkpoint(mlp, path.string());
  Network loaded = load_checkpoint(path.string());
  Rng rng(4);
  EXPECT_THROW(loaded.forward(Tensor::randn({2, 1, 8, 8}, rng)), std::invalid_argument);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ClassifierAndGeneratorFilesAreNotInterchangeable) {
  auto cpath = tmp_path("eslab_ckpt_cls.bin");
  auto gpath = tmp_path("eslab_ckpt_gen.bin");
  Network net = make_model("mlp-small", {8}, 4, 2);
  GeneratorNetwork g(16, 4, {8}, 128, 3);
  save_checkpoint(net, cpath.string());
  save_generator_checkpoint(g, gpath.string());
  EXPECT_THROW(load_generator_checkpoint(cpath.string()), std::runtime_error);
  EXPECT_THROW(load_checkpoint(gpath.string()), std::runtime_error);
  std::filesystem::remove(cpath);
  std::filesystem::remove(gpath);
}

TEST(Generator, DeterministicAndBounded) {
  GeneratorNetwork g(16, 10, {1, 8, 8}, 128, 5);
  Rng rng(6);
  Tensor z = Tensor::randn({4, 16}, rng);
  std::vector<int> labels = {0, 3, 9, 3};
  Tensor l = one_hot(labels, 10);
  Tensor a = g.generate(z, l);
  Tensor b = g.generate(z, l);
  EXPECT_EQ(a.shape(), (Shape{4, 1, 8, 8}));
  EXPECT_EQ(a.data(), b.data());
  for (double v : a.data()) EXPECT_LT(std::abs(v), 1.0);
}

TEST(Generator, VaryingLatentChangesOutput) {
  GeneratorNetwork g(16, 10, {1, 8, 8}, 128, 5);
  Rng rng(6);
  Tensor z1 = Tensor::randn({1, 16}, rng);
  Tensor z2 = Tensor::randn({1, 16}, rng);
  Tensor l = one_hot(std::vector<int>{2}, 10);
  EXPECT_NE(g.generate(z1, l).data(), g.generate(z2, l).data());
}

TEST(Generator, RejectsNonOneHotLabels) {
  GeneratorNetwork g(16, 4, {8}, 32, 5);
  Rng rng(6);
  Tensor z = Tensor::randn({2, 16}, rng);
  EXPECT_THROW(g.generate(z, Tensor({2, 4}, {0.5, 0.5, 0, 0, 1, 0, 0, 0})), std::domain_error);
  EXPECT_THROW(g.generate(z, Tensor({2, 4}, {1, 1, 0, 0, 0, 1, 0, 0})), std::domain_error);
  EXPECT_THROW(g.generate(z, Tensor({2, 4}, {0, 0, 0, 0, 0, 1, 0, 0})), std::domain_error);
  EXPECT_THROW(g.generate(z, Tensor::randn({2, 3}, rng)), std::invalid_argument);
  EXPECT_THROW(g.generate(Tensor::randn({2, 5}, rng), one_hot(std::vector<int>{0, 1}, 4)),
               std::invalid_argument);
}

TEST(Generator, CheckpointRoundTrip) {
  auto path = tmp_path("eslab_gen_roundtrip.bin");
  GeneratorNetwork g(16, 10, {1, 8, 8}, 128, 5);
  save_generator_checkpoint(g, path.string());
  GeneratorNetwork loaded = load_generator_checkpoint(path.string());
  EXPECT_EQ(loaded.latent_dim(), 16);
  EXPECT_EQ(loaded.class_count(), 10);
  EXPECT_EQ(loaded.output_shape(), (Shape{1, 8, 8}));
  Rng rng(6);
  Tensor z = Tensor::randn({3, 16}, rng);
  Tensor l = one_hot(std::vector<int>{1, 2, 3}, 10);
  EXPECT_EQ(g.generate(z, l).data(), loaded.generate(z, l).data());
  std::filesystem::remove(path);
}

TEST(Generator, GradFlowsThroughGenerate) {
  GeneratorNetwork g(4, 3, {5}, 8, 7);
  Rng rng(8);
  Tensor z = Tensor::randn({2, 4}, rng);
  Tensor l = one_hot(std::vector<int>{0, 2}, 3);
  Tape tape;
  TapeScope scope(tape);
  Tensor out = g.generate(z, l);
  Tensor loss = mean(mul(out, out));
  tape.backward(loss);
  double gsum = 0.0;
  for (auto& p : g.params())
    for (double v : p.grad()) gsum += std::abs(v);
  EXPECT_GT(gsum, 0.0);
}

TEST(Freeze, ParamFreezeBlocksRecordingAndRestores) {
  Network net = make_model("mlp-small", {4}, 3, 6);
  Rng rng(13);
  Tensor x = Tensor::randn({2, 4}, rng).set_requires_grad(true);
  Tensor target = one_hot(std::vector<int>{0, 1}, 3);
  {
    ParamFreeze freeze(net);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = softmax_cross_entropy(net.forward(x), target);
    tape.backward(loss);
    for (const auto& p : net.params()) EXPECT_FALSE(p.has_grad());
    double xg = 0.0;
    for (double v : x.grad()) xg += std::abs(v);
    EXPECT_GT(xg, 0.0);
  }
  // after the guard, params record again
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = softmax_cross_entropy(net.forward(x), target);
  tape.backward(loss);
  EXPECT_TRUE(net.params()[0].has_grad());
}
