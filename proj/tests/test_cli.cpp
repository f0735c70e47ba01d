// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "evprobe/cli.hpp"
#include "evprobe/labels.hpp"
#include "evprobe/synthetic.hpp"
#include "evprobe/trace_store.hpp"
#include "test_support.hpp"

using namespace evprobe;
using evprobe::testing::TempDir;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "evprobe");
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Small behavior dataset: two questions per planted group.
std::filesystem::path behavior_dataset(const TempDir& dir) {
  auto spec = synthetic::default_behavior_spec();
  std::vector<synthetic::PlantedQuestion> kept;
  for (const auto& q : spec.questions) {
    if (q.id.ends_with("0") || q.id.ends_with("1")) kept.push_back(q);
  }
  spec.questions = kept;
  const auto path = dir / "b.evpt";
  synthetic::write_dataset(synthetic::make_behavior_dataset(spec), path,
                           dir / "b.evpt.labels.jsonl");
  return path;
}

GenerationTrace toy_trace() {
  GenerationTrace tr;
  tr.key = {"toy", Condition::WOC, 0};
  tr.response_token_ids = {1, 2, 3};
  tr.chosen_logprobs = {-0.5f, -1.0f, -0.25f};
  tr.topk_token_ids.assign(6, 0);
  tr.topk_logits = Matrix(3, 2, {1, 1, 3, 1, 0, 0});
  tr.hidden_states.emplace(0, Matrix(3, 1, {0, 0, 0}));
  tr.response_text = "a b c";
  return tr;
}

}  // namespace

TEST_CASE("usage and config errors") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"score", "--no-such-flag"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
  TempDir dir;
  const auto ds = behavior_dataset(dir);
  CHECK(run({"--dataset", ds.string(), "--tau_c", "0.3", "--tau_e", "0.5", "regimes"}).code ==
        cli::kExitConfig);
  CHECK(run({"--dataset", ds.string(), "--transform", "tanh", "score"}).code == cli::kExitConfig);
  const auto too_big = run({"--dataset", ds.string(), "--k_evidence", "21", "score"});
  CHECK(too_big.code == cli::kExitConfig);
  CHECK(too_big.err.find("k_store") != std::string::npos);
  CHECK(run({"--dataset", (dir / "nope.evpt").string(), "score"}).code == cli::kExitData);
}

TEST_CASE("validate") {
  TempDir dir;
  const auto ds = behavior_dataset(dir);
  const auto ok = run({"--dataset", ds.string(), "validate"});
  CHECK(ok.code == cli::kExitOk);
  CHECK(ok.out.find("0 errors, 0 warnings") != std::string::npos);

  // Drop the labels of one (question, condition).
  auto labels = read_labels(dir / "b.evpt.labels.jsonl");
  std::vector<LabelRecord> kept;
  for (const auto& [key, l] : labels) {
    if (!(key.question_id == "ec0000" && key.condition == Condition::WIC)) kept.push_back(l);
  }
  write_labels(dir / "partial.jsonl", kept);
  const auto warn = run({"--dataset", ds.string(), "--labels", (dir / "partial.jsonl").string(),
                         "validate"});
  CHECK(warn.code == cli::kExitOk);
  CHECK(warn.out.find("ec0000/WIC: 15 of 15 responses unlabelled") != std::string::npos);

  // Corrupt one byte inside one record.
  const auto store = TraceStore::open(ds);
  const auto target = store.entries()[5];
  auto bytes = slurp(ds);
  std::uint64_t manifest_len = 0;
  std::memcpy(&manifest_len, bytes.data() + 8, 8);
  bytes[16 + manifest_len + target.offset + 8 + 20] ^= 0x10;
  const auto bad = dir / "bad.evpt";
  {
    std::ofstream out(bad, std::ios::binary);
    out << bytes;
  }
  std::filesystem::copy_file(dir / "b.evpt.labels.jsonl", dir / "bad.evpt.labels.jsonl");
  const auto broken = run({"--dataset", bad.string(), "validate"});
  CHECK(broken.code == cli::kExitData);
  CHECK(broken.out.find(to_string(target.key)) != std::string::npos);
  CHECK(broken.out.find("1 errors") != std::string::npos);
}

TEST_CASE("score") {
  TempDir dir;
  const auto ds = dir / "toy.evpt";
  {
    DatasetManifest m;
    m.model_name = "toy";
    m.k_store = 2;
    m.layer_indices = {0};
    m.hidden_dim = 1;
    m.m_samples = 1;
    TraceWriter w(ds, m);
    w.write(toy_trace());
    w.finalize();
  }
  const auto out_dir = dir / "out";
  const auto r = run({"--dataset", ds.string(), "--k_evidence", "2", "--output_dir",
                      out_dir.string(), "score"});
  REQUIRE(r.code == cli::kExitOk);
  const auto rows = lines(out_dir / "scores.jsonl");
  REQUIRE(rows.size() == 2);
  const auto header = json::parse(rows[0]);
  CHECK(header.at("config").at("k_evidence") == 2);
  CHECK(header.at("counts").at("p_true_missing") == 1);
  const auto row = json::parse(rows[1]);
  CHECK(row.at("logprob").get<double>() == doctest::Approx(-1.75 / 3.0));
  CHECK_FALSE(row.contains("p_true"));
  // EU per token: 2/4, 2/6, 2/2.
  CHECK(row.at("eu_lower").get<double>() == doctest::Approx((0.5 + 1.0 / 3.0 + 1.0) / 3.0));
  CHECK(row.at("T") == 3);

  const auto first = slurp(out_dir / "scores.jsonl");
  REQUIRE(run({"--dataset", ds.string(), "--k_evidence", "2", "--output_dir", out_dir.string(),
               "score"})
              .code == cli::kExitOk);
  CHECK(slurp(out_dir / "scores.jsonl") == first);

  const auto empty = dir / "empty.evpt";
  {
    DatasetManifest m;
    m.k_store = 2;
    m.layer_indices = {0};
    m.hidden_dim = 1;
    TraceWriter w(empty, m);
    w.finalize();
  }
  CHECK(run({"--dataset", empty.string(), "--k_evidence", "2", "--output_dir",
             out_dir.string(), "score"})
            .code == cli::kExitData);
}

TEST_CASE("regimes, transitions and kde") {
  TempDir dir;
  const auto ds = behavior_dataset(dir);
  const auto out_dir = dir / "out";
  const std::vector<std::string> base = {"--dataset", ds.string(), "--output_dir",
                                         out_dir.string()};
  auto with = [&](std::vector<std::string> extra) {
    auto args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };

  REQUIRE(with({"regimes"}).code == cli::kExitOk);
  const auto reg = lines(out_dir / "regimes.csv");
  CHECK(reg[0].rfind("# config: ", 0) == 0);
  CHECK(reg[1] == "question_id,condition,m,n_correct,ratio,regime");
  CHECK(reg.size() == 2 + 8 * 3);
  std::map<std::string, std::string> regime;
  for (std::size_t i = 2; i < reg.size(); ++i) {
    std::vector<std::string> f;
    std::stringstream ss(reg[i]);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    regime[f[0] + "/" + f[1]] = f[5];
  }
  CHECK(regime["ec0000/WOC"] == "E");
  CHECK(regime["ec0000/WCC"] == "C");
  CHECK(regime["ec0000/WIC"] == "MID");
  CHECK(regime["ce0001/WIC"] == "E");
  CHECK(regime["mm0001/WOC"] == "MID");
  CHECK(regime["cc0000/WIC"] == "C");

  REQUIRE(with({"transitions"}).code == cli::kExitOk);
  const auto tr = lines(out_dir / "transitions.jsonl");
  REQUIRE(tr.size() == 3);
  const auto ec = json::parse(tr[1]);
  CHECK(ec.at("transition") == "WOC:E->WCC:C");
  CHECK(ec.at("question_ids") == json{"ec0000", "ec0001"});
  CHECK(ec.at("from").at("n") == 30);
  CHECK(ec.at("mean_shift").get<double>() == doctest::Approx(0.3).epsilon(0.05 / 0.3));
  const auto ce = json::parse(tr[2]);
  CHECK(ce.at("question_ids") == json{"ce0000", "ce0001"});

  REQUIRE(with({"--pooling", "question", "transitions"}).code == cli::kExitOk);
  CHECK(json::parse(lines(out_dir / "transitions.jsonl")[1]).at("from").at("n") == 2);

  const auto k = with({"kde"});
  REQUIRE(k.code == cli::kExitOk);
  const auto kde_lines = lines(out_dir / "kde.csv");
  CHECK(kde_lines[1] == "transition,side,condition,x,density,bandwidth");
  CHECK(kde_lines.size() == 2 + 4 * 256);
  // Re-integrate every emitted curve.
  std::map<std::string, std::vector<std::pair<double, double>>> curves;
  for (std::size_t i = 2; i < kde_lines.size(); ++i) {
    std::vector<std::string> f;
    std::stringstream ss(kde_lines[i]);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    curves[f[0] + f[1]].emplace_back(std::stod(f[3]), std::stod(f[4]));
  }
  for (const auto& [name, pts] : curves) {
    double mass = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      mass += 0.5 * (pts[i].second + pts[i - 1].second) * (pts[i].first - pts[i - 1].first);
    }
    CAPTURE(name);
    CHECK(std::abs(mass - 1.0) <= 0.01);
  }
}

TEST_CASE("config file, flag overrides and output_dir environment") {
  TempDir dir;
  const auto ds = behavior_dataset(dir);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "# comment\n"
        << "dataset = \"" << ds.string() << "\"\n"
        << "tau_c = 0.9\n"
        << "k_bound = 3\n"
        << "output_dir = \"" << (dir / "from_cfg").string() << "\"\n";
  }
  const auto cfg = (dir / "run.cfg").string();
  REQUIRE(run({"--config", cfg, "regimes"}).code == cli::kExitOk);
  const auto header = lines(dir / "from_cfg" / "regimes.csv")[0];
  const auto echo = json::parse(header.substr(std::string("# config: ").size()));
  CHECK(echo.at("tau_c") == 0.9);
  CHECK(echo.at("k_bound") == 3);
  CHECK(echo.at("tau_e") == 0.4);

  REQUIRE(run({"--config", cfg, "--tau_c", "0.7", "regimes"}).code == cli::kExitOk);
  CHECK(lines(dir / "from_cfg" / "regimes.csv")[0].find("\"tau_c\":0.7") != std::string::npos);

  ::setenv(cli::kOutputDirEnv, (dir / "from_env").string().c_str(), 1);
  const auto env_run = run({"--config", cfg, "regimes"});
  const auto flag_run =
      run({"--config", cfg, "--output_dir", (dir / "from_flag").string(), "regimes"});
  ::unsetenv(cli::kOutputDirEnv);
  CHECK(env_run.code == cli::kExitOk);
  CHECK(std::filesystem::exists(dir / "from_env" / "regimes.csv"));
  CHECK(flag_run.code == cli::kExitOk);
  CHECK(std::filesystem::exists(dir / "from_flag" / "regimes.csv"));
}

TEST_CASE("label command") {
  TempDir dir;
  const auto ds = dir / "l.evpt";
  {
    DatasetManifest m;
    m.k_store = 2;
    m.layer_indices = {0};
    m.hidden_dim = 1;
    m.m_samples = 2;
    TraceWriter w(ds, m);
    auto a = toy_trace();
    a.key = {"q1", Condition::WOC, 0};
    a.response_text = "Paris.";
    w.write(a);
    a.key = {"q1", Condition::WOC, 1};
    a.response_text = "the capital is Paris";
    w.write(a);
    a.key = {"q2", Condition::WOC, 0};
    a.response_text = "London";
    w.write(a);
    w.finalize();
  }
  {
    std::ofstream q(dir / "questions.jsonl");
    q << R"({"id":"q1","question":"Capital of France?","answer":"paris"})" << "\n"
      << R"({"id":"q2","question":"Capital of Italy?","answer":"Rome"})" << "\n";
  }
  const auto r = run({"--dataset", ds.string(), "--k_evidence", "2", "--questions",
                      (dir / "questions.jsonl").string(), "label"});
  REQUIRE(r.code == cli::kExitOk);
  const auto labels = read_labels(dir / "l.evpt.labels.jsonl");
  CHECK(labels.at({"q1", Condition::WOC, 0}).z == 1);
  CHECK(labels.at({"q1", Condition::WOC, 0}).judge == JudgeKind::ExactMatch);
  CHECK(labels.at({"q1", Condition::WOC, 1}).z == 0);
  CHECK(labels.at({"q1", Condition::WOC, 1}).judge == JudgeKind::TokenF1);
  CHECK(labels.at({"q2", Condition::WOC, 0}).z == 0);
}

TEST_CASE("sweep and report through the CLI") {
  TempDir dir;
  const auto ds = dir / "p.evpt";
  synthetic::PlantedProbeSpec spec;
  spec.n_responses = 120;
  spec.n_layers = 3;
  spec.signal_layer = 1;
  spec.hidden_dim = 8;
  synthetic::write_dataset(synthetic::make_planted_probe_dataset(spec), ds,
                           dir / "p.evpt.labels.jsonl");
  const auto out_dir = dir / "out";
  const auto r = run({"--dataset", ds.string(), "--output_dir", out_dir.string(), "--threads",
                      "2", "--selections", "eos", "eu:-1", "avg", "report"});
  REQUIRE(r.code == cli::kExitOk);
  for (const char* f : {"scores.jsonl", "regimes.csv", "transitions.jsonl", "kde.csv",
                        "sweep.jsonl", "sweep_heatmap.csv"}) {
    CHECK(std::filesystem::exists(out_dir / f));
  }
  const auto heat = lines(out_dir / "sweep_heatmap.csv");
  CHECK(heat[0].rfind("# config: ", 0) == 0);
  CHECK(heat[1] == "layer,eos,eu:-1,avg");
  CHECK(heat.size() == 5);
  const auto sweep = lines(out_dir / "sweep.jsonl");
  CHECK(sweep.size() == 1 + 3 + 3 * 3);
  const auto first = slurp(out_dir / "sweep.jsonl");
  REQUIRE(run({"--dataset", ds.string(), "--output_dir", out_dir.string(), "--selections", "eos",
               "eu:-1", "avg", "sweep"})
              .code == cli::kExitOk);
  CHECK(slurp(out_dir / "sweep.jsonl") != "");
  // Thread count is not part of the echo, so the file is byte-identical.
  CHECK(slurp(out_dir / "sweep.jsonl") == first);
}
