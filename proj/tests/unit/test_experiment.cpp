#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "subjectlab/error.hpp"
#include "subjectlab/experiment.hpp"

using namespace subjectlab;

TEST(Config, JsonRoundTripKeepsHash) {
  ExperimentConfig c;
  c.seed = 12;
  c.finetune.lambda = 0.5;
  c.subject_noun = "star";
  const ExperimentConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(config_from_json(config_to_json(back))));
  EXPECT_EQ(back.finetune.lambda, 0.5);
  EXPECT_EQ(back.subject_noun, "star");
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(Config, HashSensitiveToValues) {
  ExperimentConfig a, b;
  b.finetune.epochs += 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, CanonicalFormSortsKeys) {
  const Json j = Json::parse(R"({"b": 1, "a": {"d": 2, "c": [1, 2]}})");
  EXPECT_EQ(canonical_json(j), R"({"a":{"c":[1,2],"d":2},"b":1})");
}

TEST(Config, UnknownKeysRejected) {
  Json j = config_to_json(ExperimentConfig{});
  j["finetune"]["lamda"] = 1.0;
  EXPECT_THROW(config_from_json(j), ValueError);
  Json top = config_to_json(ExperimentConfig{});
  top["extra"] = 1;
  EXPECT_THROW(config_from_json(top), ValueError);
}

TEST(Config, DottedOverrides) {
  Json j = config_to_json(ExperimentConfig{});
  apply_override(j, "finetune.lambda=0.25");
  apply_override(j, "subject.noun=box");
  apply_override(j, "finetune.mode=naive");
  const ExperimentConfig c = config_from_json(j);
  EXPECT_EQ(c.finetune.lambda, 0.25);
  EXPECT_EQ(c.subject_noun, "box");
  EXPECT_EQ(c.finetune.mode, FinetuneMode::Naive);
  EXPECT_THROW(apply_override(j, "finetune.nope=1"), ValueError);
  EXPECT_THROW(apply_override(j, "no_equals"), ValueError);
}

TEST(Config, LoadFileWithOverrides) {
  const auto path = std::filesystem::temp_directory_path() / "subjectlab_cfg_test.json";
  write_text(path, R"({"seed": 4, "finetune": {"epochs": 7}})");
  const ExperimentConfig c = load_config(path, {"finetune.epochs=9"});
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.finetune.epochs, 9u);
  EXPECT_EQ(c.finetune.seed, run_seeds(4).finetune);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), IoError);
}

TEST(Config, OutputRootFromEnvironment) {
  ExperimentConfig c;
  c.output_dir = "somewhere";
  ::unsetenv("SUBJECTLAB_OUT");
  EXPECT_EQ(output_root(c), std::filesystem::path("somewhere"));
  ::setenv("SUBJECTLAB_OUT", "/tmp/elsewhere", 1);
  EXPECT_EQ(output_root(c), std::filesystem::path("/tmp/elsewhere"));
  ::unsetenv("SUBJECTLAB_OUT");
}

TEST(Seeds, DistinctAndStable) {
  const RunSeeds a = run_seeds(0), b = run_seeds(0);
  const std::set<std::uint64_t> all = {a.pretrain, a.identifier, a.subject, a.subject_set,
                                       a.prior,    a.finetune,   a.eval,    a.sr_train,
                                       a.sr_finetune, a.sr_eval};
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(a.eval, b.eval);
  EXPECT_NE(run_seeds(1).eval, a.eval);
}

TEST(Grid, Dimensions) {
  const ImageDims d{4, 5, 3};
  std::vector<Tensor> imgs(7, Tensor({d.size()}, -1.0f));
  ImageDims g;
  const Tensor grid = make_grid(imgs, d, 3, &g);
  EXPECT_EQ(g, (ImageDims{3 * 5 + 1, 3 * 6 + 1, 3}));
  EXPECT_EQ(grid.size(), g.size());
  EXPECT_EQ(grid[0], 1.0f);
  EXPECT_EQ(grid[(1 * g.width + 1) * 3], -1.0f);
  EXPECT_THROW(make_grid({}, d, 3, &g), ValueError);
  EXPECT_THROW(make_grid({Tensor({3})}, d, 3, &g), ShapeError);
}

TEST(Reference, SubjectFollowsConfig) {
  ExperimentConfig c;
  c.subject_noun = "box";
  c.subject_tex_freq = 5;
  const SubjectParams s = reference_subject(c);
  EXPECT_EQ(s.class_id, class_id("box"));
  EXPECT_EQ(s.tex_freq, 5);
  EXPECT_EQ(reference_subject(c), s);
}
