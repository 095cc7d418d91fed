#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "pts/checkpoint.hpp"
#include "pts/dataset.hpp"
#include "pts/pipeline_check.hpp"
#include "primitive_checks.hpp"

using namespace pts;
using pts::testing::uniform;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.encoder.dims = {32, 24, 16};
  cfg.prompt_length = 3;
  cfg.bias_hidden = 4;
  cfg.backend_hidden = 12;
  cfg.num_classes = 3;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pts_test_model_" + name);
}

}  // namespace

TEST(Model, ZeroInitialisedCalibrationIsExactIdentity) {
  std::mt19937_64 rng(1);
  PtsSnn model(ModelConfig{}, 42);
  const Tensor x = uniform({3, 20, 768}, rng, -3, 3, false);
  ForwardOptions off;
  off.zero_bias = true;
  ForwardTrace trace;
  const Tensor on = model.forward(x, {}, &trace);
  for (double v : trace.v_bias.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(on.values(), model.forward(x, off).values());
}

TEST(Model, ShapesThroughThePipeline) {
  std::mt19937_64 rng(2);
  PtsSnn model(small_config(), 3);
  ForwardTrace trace;
  const Tensor logits = model.forward(uniform({2, 7, 32}, rng, -2, 2, false), {}, &trace);
  EXPECT_EQ(logits.shape(), (Shape{2, 3}));
  EXPECT_EQ(trace.joint.shape(), (Shape{2, 10, 16}));
  EXPECT_EQ(trace.context.shape(), (Shape{2, 16}));
  EXPECT_EQ(trace.x_hat.shape(), (Shape{2, 7, 16}));
  for (const Tensor* s : {&trace.encoder.blocks[0].spikes, &trace.encoder.blocks[1].spikes,
                          &trace.ssla.spikes, &trace.backend.spikes}) {
    for (double v : s->data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
}

TEST(Model, SameSeedSameParameters) {
  PtsSnn a(small_config(), 5), b(small_config(), 5), c(small_config(), 6);
  const auto pa = a.state(), pb = b.state(), pc = c.state();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values()) << pa[i].name;
    any_diff = any_diff || pa[i].tensor.values() != pc[i].tensor.values();
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, ParameterNamesAreUnique) {
  PtsSnn model(small_config(), 1);
  std::set<std::string> names;
  for (const auto& p : model.state()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  for (const auto& p : model.parameters()) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
}

TEST(Model, CloneSharesNoStorage) {
  PtsSnn model(small_config(), 1);
  PtsSnn copy = model.clone();
  auto original = model.state();
  auto cloned = copy.state();
  ASSERT_EQ(original.size(), cloned.size());
  for (std::size_t i = 0; i < original.size(); ++i) {
    EXPECT_EQ(original[i].tensor.values(), cloned[i].tensor.values());
    EXPECT_NE(original[i].tensor.impl(), cloned[i].tensor.impl());
    EXPECT_EQ(original[i].tensor.requires_grad(), cloned[i].tensor.requires_grad());
  }
  copy.prompts.mutable_data()[0] += 1.0;
  EXPECT_NE(copy.prompts.data()[0], model.prompts.data()[0]);
}

TEST(Model, LoadStateCopiesByName) {
  PtsSnn a(small_config(), 1), b(small_config(), 2);
  load_state(b, a.state());
  const auto sa = a.state(), sb = b.state();
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].tensor.values(), sb[i].tensor.values());
  auto partial = a.state();
  partial.pop_back();
  EXPECT_THROW(load_state(b, partial), std::runtime_error);
  PtsSnn other(ModelConfig{}, 1);
  EXPECT_THROW(load_state(b, other.state()), ShapeError);
}

TEST(Model, ConfigValidation) {
  ModelConfig cfg = small_config();
  cfg.bias_hidden = 16;
  EXPECT_THROW(PtsSnn(cfg, 1), std::invalid_argument);
  cfg = small_config();
  cfg.prompt_length = 0;
  EXPECT_THROW(PtsSnn(cfg, 1), std::invalid_argument);
  cfg = small_config();
  cfg.num_classes = 1;
  EXPECT_THROW(PtsSnn(cfg, 1), std::invalid_argument);
}

TEST(Model, ZeroInputIsSilentEverywhere) {
  PtsSnn model(small_config(), 4);
  ForwardTrace trace;
  model.forward(Tensor::zeros({2, 5, 32}), {}, &trace);
  for (const Tensor* s : {&trace.encoder.blocks[0].spikes, &trace.encoder.blocks[1].spikes,
                          &trace.ssla.spikes, &trace.backend.spikes}) {
    for (double v : s->data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  PtsSnn model(small_config(), 9);
  for (double& v : model.bias.w_up.mutable_data()) v = uniform({1}, rng, -1, 1, false).item();
  model.backend.bn.running_var.mutable_data()[0] = 1.0 / 3.0;
  const auto path = temp_path("roundtrip.ptsc");
  write_checkpoint(path, "model.kappa = 0.5\n", model);
  const Checkpoint ck = read_checkpoint(path);
  EXPECT_EQ(ck.config_text, "model.kappa = 0.5\n");
  PtsSnn restored(small_config(), 1);
  load_state(restored, ck.tensors);
  const auto a = model.state(), b = restored.state();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, ck.tensors[i].name);
    EXPECT_EQ(a[i].tensor.values(), b[i].tensor.values()) << a[i].name;
  }
  const Tensor x = uniform({2, 6, 32}, rng, -2, 2, false);
  EXPECT_EQ(model.forward(x).values(), restored.forward(x).values());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  PtsSnn model(small_config(), 9);
  const auto path = temp_path("corrupt.ptsc");
  write_checkpoint(path, "", model);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(read_checkpoint(path), FormatError);
  write_checkpoint(path, "", model);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  EXPECT_THROW(read_checkpoint(path), FormatError);
  EXPECT_THROW(read_checkpoint(temp_path("missing.ptsc")), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(PipelineCheck, EveryStagePasses) {
  const auto reports = gradcheck::check_pipeline();
  std::set<std::string> seen;
  for (const auto& r : reports) {
    EXPECT_TRUE(seen.insert(r.stage).second) << r.stage;
    EXPECT_TRUE(r.passed) << r.stage << " " << r.max_rel_error;
    EXPECT_GT(r.elements, 0u);
  }
  for (const char* stage : {"input", "soft_saturate", "encoder.block1", "encoder.block2", "prompts",
                            "ssla", "bias_generator", "backend"}) {
    EXPECT_TRUE(seen.count(stage)) << stage;
  }
}

TEST(PipelineCheck, InjectedFaultIsDetectedUpstream) {
  gradcheck::PipelineOptions opts;
  opts.inject_fault = "ssla";
  const auto reports = gradcheck::check_pipeline(opts);
  for (const auto& r : reports) {
    const bool upstream = r.stage == "input" || r.stage == "soft_saturate" ||
                          r.stage.rfind("encoder.", 0) == 0 || r.stage == "prompts" ||
                          r.stage == "ssla";
    EXPECT_EQ(r.passed, !upstream) << r.stage << " " << r.max_rel_error;
  }
  opts.inject_fault = "nowhere";
  EXPECT_THROW(gradcheck::check_pipeline(opts), std::invalid_argument);
}

TEST(PipelineCheck, FaultyIdentityScalesTheGradient) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tape tape;
  Tape::Scope scope(tape);
  const Tensor y = gradcheck::faulty_identity(x);
  EXPECT_EQ(y.values(), x.values());
  tape.backward(sum_all(y));
  EXPECT_EQ(x.grad()[0], 1.5);
}
