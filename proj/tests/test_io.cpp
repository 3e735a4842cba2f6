#include <gtest/gtest.h>

#include <ntklab/io.hpp>

#include <sstream>

using namespace ntklab;

namespace {

SweepRow sample_row() {
  SweepRow r;
  r.experiment_id = "a";
  r.d = 3;
  r.n0 = 2;
  r.widths = {4, 5};
  r.dist = "normal";
  r.beta_paper = 1.45;
  r.beta_hidden = 0.45;
  r.trials = 10;
  r.mean_K = 0.1;
  r.theory_mean = 4.5;
  return r;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

TEST(ConfigJson, RoundTrip) {
  ExperimentConfig c;
  c.id = "deep";
  c.kind = ExperimentKind::update;
  c.arch = Architecture{3, {7, 9}};
  c.dist = WeightDistribution{WeightKind::uniform};
  c.x = std::vector<double>{0.1, -2.5, 1.0 / 3.0};
  c.trials = 123;
  c.seed = 18446744073709551615ull;
  c.lambda = 2.5e-4;
  c.target = -0.7;
  c.shards = 8;
  c.oracle = false;
  c.convention = BiasConvention::paper;
  const auto text = config_to_json(c).dump();
  EXPECT_EQ(config_from_json(parse_json_text(text, "t")), c);
  ExperimentConfig d;
  d.arch = Architecture{2, {3}};
  d.xnorm2 = 5.0;
  EXPECT_EQ(config_from_json(config_to_json(d)), d);
}

TEST(ConfigJson, DefaultsAndErrors) {
  const auto c = config_from_json(parse_json_text(R"({"n0": 4, "hidden": [16,16,16], "dist": "normal"})", "t"));
  EXPECT_EQ(c.arch.depth(), 4);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.trials, 1000);
  EXPECT_THROW(config_from_json(parse_json_text(R"({"n0": 4, "hiden": [3]})", "t")), ValidationError);
  EXPECT_THROW(config_from_json(parse_json_text(R"({"hidden": [3]})", "t")), ValidationError);
  EXPECT_THROW(config_from_json(parse_json_text(R"({"n0": "4", "hidden": [3]})", "t")), ValidationError);
  EXPECT_THROW(config_from_json(parse_json_text(R"({"n0": 4, "hidden": [3], "trials": 0})", "t")), ValidationError);
  EXPECT_THROW(config_from_json(parse_json_text(R"({"n0": 4, "hidden": [3], "kind": "train"})", "t")),
               ValidationError);
  EXPECT_THROW(parse_json_text("{", "t"), ValidationError);
}

TEST(ConfigJson, Grids) {
  EXPECT_TRUE(grid_from_json(parse_json_text("[]", "g")).empty());
  EXPECT_EQ(grid_from_json(parse_json_text(R"({"configs": [{"n0": 1, "hidden": []}]})", "g")).size(), 1u);
  EXPECT_THROW(grid_from_json(parse_json_text(R"({"rows": []})", "g")), ValidationError);
}

TEST(Csv, HeaderOrder) {
  std::ostringstream os;
  write_csv(os, {}, RunManifest{});
  const auto lines = split(os.str(), '\n');
  ASSERT_GE(lines.size(), 2u);
  EXPECT_EQ(lines[0].rfind("# manifest: ", 0), 0u);
  EXPECT_EQ(lines[1],
            "experiment_id,d,n0,widths,dist,beta_paper,beta_hidden,trials,mean_K,se_mean_K,mean_Kw,mean_Kb,mean_K2,"
            "se_K2,ratio,ratio_ci_lo,ratio_ci_hi,mean_dK,mean_dK_lin,flip_rate,theory_mean,theory_ratio_central,"
            "oracle_mean");
  EXPECT_EQ(lines.size(), 3u);  // trailing newline
}

TEST(Csv, RowFormatting) {
  auto r = sample_row();
  const auto cells = split(csv_row(r), ',');
  ASSERT_EQ(cells.size(), csv_columns().size());
  EXPECT_EQ(cells[3], "4;5");
  EXPECT_EQ(cells[8], "0.10000000000000001");
  EXPECT_EQ(std::stod(cells[8]), 0.1);
  EXPECT_EQ(cells[17], "");
  EXPECT_EQ(cells[22], "");
  r.oracle_mean = 4.875;
  EXPECT_EQ(split(csv_row(r), ',')[22], "4.875");
}

TEST(Csv, NonFiniteIsRejected) {
  auto r = sample_row();
  r.ratio = std::nan("");
  EXPECT_THROW(csv_row(r), ContractError);
  r = sample_row();
  r.mean_dK = INFINITY;
  EXPECT_THROW(csv_row(r), ContractError);
  std::ostringstream os;
  EXPECT_THROW(write_csv(os, {sample_row(), r}, RunManifest{}), ContractError);
  EXPECT_TRUE(os.str().empty());
}

TEST(Manifest, EmbedsConfigThatReparses) {
  ExperimentConfig c;
  c.arch = Architecture{2, {3, 3}};
  RunManifest m;
  m.command = "mc";
  m.config = config_to_json(c);
  m.seed = c.seed;
  const auto j = parse_json_text(manifest_to_json(m).dump(), "m");
  EXPECT_EQ(j.at("tool"), "ntklab");
  EXPECT_EQ(config_from_json(j.at("config")), c);
}
