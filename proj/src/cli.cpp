// SPDX-License-Identifier: Apache-2.0

#include "evprobe/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "evprobe/behavior.hpp"
#include "evprobe/error.hpp"
#include "evprobe/labels.hpp"
#include "evprobe/probe.hpp"
#include "evprobe/scoring.hpp"
#include "evprobe/sweep.hpp"
#include "evprobe/synthetic.hpp"
#include "evprobe/trace_store.hpp"

namespace evprobe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ScoringConfig scoring_config(const RunConfig& c) {
  ScoringConfig s;
  s.k_evidence = c.k_evidence;
  s.transform = evidential::parse_transform(c.transform);
  s.au_form = evidential::parse_aleatoric_form(c.au_form);
  s.k_agg = c.k_agg;
  s.k_bound = c.k_bound;
  return s;
}

fs::path labels_path(const RunConfig& c) {
  if (!c.labels.empty()) return c.labels;
  fs::path p = c.dataset;
  p += ".labels.jsonl";
  return p;
}

TraceStore open_store(const RunConfig& c) {
  if (c.dataset.empty()) fail(ErrorKind::Config, "no dataset given (--dataset)");
  auto store = TraceStore::open(c.dataset);
  if (c.k_evidence > store.manifest().k_store) {
    fail(ErrorKind::Config, "k_evidence " + std::to_string(c.k_evidence) +
                                " exceeds the dataset's k_store " +
                                std::to_string(store.manifest().k_store));
  }
  return store;
}

LabelMap load_labels(const RunConfig& c) {
  const fs::path p = labels_path(c);
  if (!fs::exists(p)) fail(ErrorKind::Data, "label file " + p.string() + " not found");
  return read_labels(p);
}

std::vector<IndexEntry> sorted_entries(const TraceStore& store) {
  auto entries = store.entries();
  std::sort(entries.begin(), entries.end(),
            [](const IndexEntry& a, const IndexEntry& b) { return a.key < b.key; });
  return entries;
}

std::ofstream open_output(const RunConfig& c, const std::string& name) {
  fs::create_directories(c.output_dir);
  const fs::path p = c.output_dir / name;
  std::ofstream out(p, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
  return out;
}

void csv_header(std::ostream& out, const RunConfig& c) {
  out << "# config: " << echo(c).dump() << '\n';
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<behavior::QuestionRecord> question_records(const RunConfig& c,
                                                       const TraceStore& store,
                                                       const LabelMap& labels,
                                                       std::size_t& unlabeled) {
  const auto scoring = scoring_config(c);
  const behavior::Thresholds thresholds{c.tau_c, c.tau_e};
  std::map<std::string, behavior::QuestionRecord> by_id;
  unlabeled = 0;
  for (const auto& entry : sorted_entries(store)) {
    auto label = labels.find(entry.key);
    if (label == labels.end()) {
      ++unlabeled;
      continue;
    }
    const auto row = score_response(store.read(entry), scoring);
    behavior::ResponseScores rs;
    rs.sample_index = entry.key.sample_index;
    rs.z = label->second.z;
    rs.eu_lower = row.eu.lower;
    rs.eu_upper = row.eu.upper;
    rs.au_lower = row.au.lower;
    rs.au_upper = row.au.upper;
    rs.rel_lower = row.reliability.lower;
    rs.rel_upper = row.reliability.upper;
    auto& q = by_id[entry.key.question_id];
    q.question_id = entry.key.question_id;
    q.conditions[entry.key.condition].responses.push_back(rs);
  }
  std::vector<behavior::QuestionRecord> out;
  for (auto& [id, q] : by_id) {
    behavior::classify(q, thresholds);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<behavior::TransitionSet> transition_sets(
    const RunConfig& c, const std::vector<behavior::QuestionRecord>& records) {
  const auto field = behavior::parse_score_field(c.kde_score);
  const auto pooling = behavior::parse_pooling(c.pooling);
  std::vector<behavior::TransitionSet> sets;
  for (const auto& t : c.transitions) {
    sets.push_back(behavior::find_transitions(records, behavior::parse_transition(t),
                                              field, pooling));
  }
  return sets;
}

json summary_json(const std::vector<double>& samples) {
  if (samples.empty()) return nullptr;
  const auto s = behavior::summarize_distribution(samples);
  return {{"n", s.n},
          {"mean", s.mean},
          {"variance", s.variance},
          {"skewness", s.skewness},
          {"quantiles", {{"p05", s.quantiles[0]},
                         {"p25", s.quantiles[1]},
                         {"p50", s.quantiles[2]},
                         {"p75", s.quantiles[3]},
                         {"p95", s.quantiles[4]}}}};
}

// ---------------------------------------------------------------------------
// Commands

int cmd_validate(const RunConfig& c, std::ostream& out, std::ostream&) {
  std::size_t errors = 0;
  std::size_t warnings = 0;
  auto error = [&](const std::string& msg) {
    ++errors;
    out << "error: " << msg << '\n';
  };
  auto warning = [&](const std::string& msg) {
    ++warnings;
    out << "warning: " << msg << '\n';
  };

  std::optional<TraceStore> store;
  try {
    store = TraceStore::open(c.dataset);
  } catch (const Error& ex) {
    error(std::string(to_string(ex.kind())) + ": " + ex.what());
    out << "0 records checked, " << errors << " errors, " << warnings << " warnings\n";
    return kExitData;
  }
  std::map<TraceKey, std::size_t> lengths;
  for (const auto& entry : store->entries()) {
    try {
      lengths[entry.key] = store->read(entry).length();
    } catch (const Error& ex) {
      error("record " + to_string(entry.key) + ": " + std::string(to_string(ex.kind())) +
            ": " + ex.what());
    }
  }

  const fs::path lp = labels_path(c);
  if (!fs::exists(lp)) {
    warning("no label file at " + lp.string());
  } else {
    LabelMap labels;
    try {
      labels = read_labels(lp);
    } catch (const Error& ex) {
      error(std::string("labels: ") + ex.what());
    }
    std::map<std::pair<std::string, Condition>, std::pair<std::size_t, std::size_t>> coverage;
    for (const auto& entry : store->entries()) {
      auto& cov = coverage[{entry.key.question_id, entry.key.condition}];
      ++cov.first;
      if (labels.contains(entry.key)) ++cov.second;
    }
    for (const auto& [key, cov] : coverage) {
      if (cov.second < cov.first) {
        warning("labels missing for " + key.first + "/" + std::string(to_string(key.second)) +
                ": " + std::to_string(cov.first - cov.second) + " of " +
                std::to_string(cov.first) + " responses unlabelled");
      }
      if (cov.first != store->manifest().m_samples) {
        warning(key.first + "/" + std::string(to_string(key.second)) + " has " +
                std::to_string(cov.first) + " responses, manifest m_samples is " +
                std::to_string(store->manifest().m_samples));
      }
    }
    std::size_t orphans = 0;
    for (const auto& [key, label] : labels) {
      if (!store->contains(key)) {
        ++orphans;
        continue;
      }
      auto len = lengths.find(key);
      if (label.exact_answer_span && len != lengths.end() &&
          label.exact_answer_span->end > len->second) {
        error("label " + to_string(key) + ": exact_answer_span outside the response");
      }
    }
    if (orphans > 0) warning(std::to_string(orphans) + " labels refer to unknown traces");
  }
  out << store->entries().size() << " records checked, " << errors << " errors, "
      << warnings << " warnings\n";
  return errors > 0 ? kExitData : kExitOk;
}

int cmd_score(const RunConfig& c, std::ostream& out, std::ostream&) {
  const auto store = open_store(c);
  const auto entries = sorted_entries(store);
  if (entries.empty()) fail(ErrorKind::Data, "dataset contains no traces");
  const auto scoring = scoring_config(c);
  std::vector<json> rows;
  std::size_t missing_p_true = 0;
  for (const auto& entry : entries) {
    const auto row = score_response(store.read(entry), scoring);
    if (!row.p_true) ++missing_p_true;
    rows.push_back(to_json(row));
  }
  auto file = open_output(c, "scores.jsonl");
  file << json{{"config", echo(c)},
               {"counts", {{"responses", rows.size()}, {"p_true_missing", missing_p_true}}}}
              .dump()
       << '\n';
  for (const auto& r : rows) file << r.dump() << '\n';
  out << "scored " << rows.size() << " responses (" << missing_p_true
      << " without p_true) -> " << (c.output_dir / "scores.jsonl").string() << '\n';
  return kExitOk;
}

int cmd_regimes(const RunConfig& c, std::ostream& out, std::ostream&) {
  const auto store = open_store(c);
  const auto labels = load_labels(c);
  std::size_t unlabeled = 0;
  const auto records = question_records(c, store, labels, unlabeled);
  auto file = open_output(c, "regimes.csv");
  csv_header(file, c);
  file << "question_id,condition,m,n_correct,ratio,regime\n";
  std::map<std::pair<Condition, behavior::Regime>, std::size_t> counts;
  for (const auto& q : records) {
    for (const auto& [cond, rec] : q.conditions) {
      std::size_t correct = 0;
      for (const auto& r : rec.responses) correct += static_cast<std::size_t>(r.z);
      file << q.question_id << ',' << to_string(cond) << ',' << rec.responses.size() << ','
           << correct << ',' << fmt(rec.ratio) << ',' << to_string(rec.regime) << '\n';
      ++counts[{cond, rec.regime}];
    }
  }
  for (Condition cond : kAllConditions) {
    out << to_string(cond) << ":";
    for (auto r : {behavior::Regime::C, behavior::Regime::MID, behavior::Regime::E}) {
      out << ' ' << to_string(r) << '=' << counts[{cond, r}];
    }
    out << '\n';
  }
  if (unlabeled > 0) out << unlabeled << " unlabelled responses skipped\n";
  return kExitOk;
}

int cmd_transitions(const RunConfig& c, std::ostream& out, std::ostream&) {
  const auto store = open_store(c);
  const auto labels = load_labels(c);
  std::size_t unlabeled = 0;
  const auto records = question_records(c, store, labels, unlabeled);
  auto file = open_output(c, "transitions.jsonl");
  file << json{{"config", echo(c)}}.dump() << '\n';
  for (const auto& set : transition_sets(c, records)) {
    json row = {{"transition", behavior::to_string(set.transition)},
                {"question_ids", set.question_ids},
                {"n_questions", set.question_ids.size()},
                {"skipped", set.skipped},
                {"score", c.kde_score},
                {"pooling", c.pooling},
                {"from", summary_json(set.from_samples)},
                {"to", summary_json(set.to_samples)},
                {"mean_shift", nullptr}};
    if (!set.from_samples.empty() && !set.to_samples.empty()) {
      // Positive when the "to" distribution sits left of the "from" one.
      row["mean_shift"] = row["from"]["mean"].get<double>() - row["to"]["mean"].get<double>();
    }
    file << row.dump() << '\n';
    out << behavior::to_string(set.transition) << ": " << set.question_ids.size()
        << " questions";
    if (set.skipped > 0) out << " (" << set.skipped << " skipped, condition missing)";
    out << '\n';
  }
  return kExitOk;
}

int cmd_kde(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto store = open_store(c);
  const auto labels = load_labels(c);
  std::size_t unlabeled = 0;
  const auto records = question_records(c, store, labels, unlabeled);
  const auto bw = c.kde_bandwidth > 0.0 ? behavior::Bandwidth::fixed(c.kde_bandwidth)
                                        : behavior::Bandwidth::silverman();
  auto file = open_output(c, "kde.csv");
  csv_header(file, c);
  file << "transition,side,condition,x,density,bandwidth\n";
  for (const auto& set : transition_sets(c, records)) {
    const std::string name = behavior::to_string(set.transition);
    const std::pair<const char*, const std::vector<double>*> sides[] = {
        {"from", &set.from_samples}, {"to", &set.to_samples}};
    for (const auto& [side, samples] : sides) {
      const auto cond = std::string(side) == "from" ? set.transition.from.condition
                                                    : set.transition.to.condition;
      if (samples->size() < 2) {
        err << "warning: " << name << " " << side << ": fewer than 2 samples, no curve\n";
        continue;
      }
      const auto curve = behavior::kde(*samples, bw);
      for (std::size_t i = 0; i < curve.grid.size(); ++i) {
        file << name << ',' << side << ',' << to_string(cond) << ',' << fmt(curve.grid[i])
             << ',' << fmt(curve.density[i]) << ',' << fmt(curve.bandwidth) << '\n';
      }
      out << name << " " << side << ": n=" << samples->size()
          << " bandwidth=" << fmt(curve.bandwidth) << " mass=" << fmt(behavior::integrate(curve))
          << '\n';
    }
  }
  return kExitOk;
}

int cmd_sweep(const RunConfig& c, std::ostream& out, std::ostream&) {
  const auto store = open_store(c);
  const auto labels = load_labels(c);
  const auto scoring = scoring_config(c);
  std::vector<int> layers = c.layers.empty() ? store.manifest().layer_indices : c.layers;
  std::vector<probe::TokenSelection> selections;
  if (c.selections.empty()) {
    selections = probe::default_selections();
  } else {
    for (const auto& s : c.selections) selections.push_back(probe::parse_selection(s));
  }

  std::vector<probe::SweepSample> samples;
  std::size_t unlabeled = 0;
  for (const auto& entry : sorted_entries(store)) {
    auto label = labels.find(entry.key);
    if (label == labels.end()) {
      ++unlabeled;
      continue;
    }
    auto trace = store.read(entry);
    const auto row = score_response(trace, scoring);
    probe::SweepSample s;
    s.key = entry.key;
    s.z = label->second.z;
    s.span = label->second.exact_answer_span;
    for (const auto& t : score_tokens(trace, scoring)) {
      s.rank_scores.push_back(c.rank_by == "au" ? t.au : t.eu);
    }
    s.logprob = row.logprob;
    s.logtoku = row.logtoku;
    s.p_true = row.p_true;
    for (int layer : layers) {
      auto it = trace.hidden_states.find(layer);
      if (it == trace.hidden_states.end()) {
        fail(ErrorKind::Config, "layer " + std::to_string(layer) + " not stored in the dataset");
      }
      s.hidden.emplace(layer, std::move(it->second));
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) fail(ErrorKind::Data, "no labelled responses to sweep");

  probe::SweepOptions options;
  options.hyper = {c.l2, c.max_iter, c.tol, c.split_seed};
  options.threads = c.threads;
  const auto report = probe::layer_sweep(samples, layers, selections, options);

  auto jsonl = open_output(c, "sweep.jsonl");
  jsonl << json{{"config", echo(c)}, {"n_samples", samples.size()}, {"unlabelled", unlabeled}}
               .dump()
        << '\n';
  for (const auto& r : report.rows) jsonl << probe::to_json(r).dump() << '\n';
  auto csv = open_output(c, "sweep_heatmap.csv");
  csv_header(csv, c);
  probe::write_heatmap_csv(csv, report);

  std::size_t failed = 0;
  for (const auto& r : report.rows) failed += r.auroc ? 0 : 1;
  out << "swept " << layers.size() << " layers x " << selections.size() << " selections on "
      << samples.size() << " responses";
  if (failed > 0) out << " (" << failed << " cells without AUROC)";
  out << '\n';
  for (const auto& r : report.rows) {
    if (!r.best) continue;
    out << "best " << r.method << ": auroc=" << fmt(*r.auroc);
    if (r.layer) out << " layer=" << *r.layer << " selection=" << r.selection;
    if (!r.detail.empty()) out << " (" << r.detail << ")";
    out << '\n';
  }
  return kExitOk;
}

int cmd_label(const RunConfig& c, std::ostream& out, std::ostream&) {
  if (c.questions.empty()) fail(ErrorKind::Config, "label needs --questions");
  const auto store = open_store(c);
  std::ifstream in(c.questions);
  if (!in) fail(ErrorKind::Io, "cannot open " + c.questions.string());
  std::map<std::string, std::string> gold;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("answer")) {
      fail(ErrorKind::Data, "question lines need \"id\" and \"answer\"");
    }
    gold[j.at("id").get<std::string>()] = j.at("answer").get<std::string>();
  }
  std::vector<LabelRecord> labels;
  std::size_t missing = 0;
  for (const auto& entry : sorted_entries(store)) {
    auto g = gold.find(entry.key.question_id);
    if (g == gold.end()) {
      ++missing;
      continue;
    }
    labels.push_back(
        fallback_label(entry.key, store.read(entry).response_text, g->second, c.theta));
  }
  const fs::path lp = labels_path(c);
  write_labels(lp, labels);
  out << "labelled " << labels.size() << " responses -> " << lp.string() << '\n';
  if (missing > 0) out << missing << " responses without a gold answer skipped\n";
  return kExitOk;
}

int run_all(const RunConfig& c, std::ostream& out, std::ostream& err) {
  int worst = kExitOk;
  for (auto* cmd : {cmd_score, cmd_regimes, cmd_transitions, cmd_kde, cmd_sweep}) {
    worst = std::max(worst, cmd(c, out, err));
  }
  return worst;
}

}  // namespace

void check_config(const RunConfig& c) {
  auto bad = [](const std::string& msg) { fail(ErrorKind::Config, msg); };
  if (c.k_evidence < 2) bad("k_evidence must be >= 2");
  if (c.k_agg < 1) bad("k_agg must be >= 1");
  if (c.k_bound < 1) bad("k_bound must be >= 1");
  if (!(0.0 <= c.tau_e && c.tau_e <= c.tau_c && c.tau_c <= 1.0)) {
    bad("thresholds must satisfy 0 <= tau_e <= tau_c <= 1");
  }
  if (!(c.theta >= 0.0 && c.theta <= 1.0)) bad("theta must be in [0, 1]");
  if (!(c.l2 >= 0.0)) bad("l2 must be >= 0");
  if (c.max_iter < 0) bad("max_iter must be >= 0");
  if (!(c.tol >= 0.0)) bad("tol must be >= 0");
  if (c.rank_by != "eu" && c.rank_by != "au") bad("rank_by must be eu or au");
  if (c.kde_bandwidth < 0.0) bad("kde_bandwidth must be >= 0");
  evidential::parse_transform(c.transform);
  evidential::parse_aleatoric_form(c.au_form);
  behavior::parse_score_field(c.kde_score);
  behavior::parse_pooling(c.pooling);
  for (const auto& t : c.transitions) behavior::parse_transition(t);
  for (const auto& s : c.selections) probe::parse_selection(s);
}

json echo(const RunConfig& c) {
  return {{"dataset", c.dataset.string()},
          {"labels", labels_path(c).string()},
          {"k_evidence", c.k_evidence},
          {"transform", c.transform},
          {"au_form", c.au_form},
          {"k_agg", c.k_agg},
          {"k_bound", c.k_bound},
          {"tau_c", c.tau_c},
          {"tau_e", c.tau_e},
          {"theta", c.theta},
          {"layers", c.layers},
          {"selections", c.selections},
          {"rank_by", c.rank_by},
          {"l2", c.l2},
          {"max_iter", c.max_iter},
          {"tol", c.tol},
          {"split_seed", c.split_seed},
          {"transitions", c.transitions},
          {"kde_score", c.kde_score},
          {"pooling", c.pooling},
          {"kde_bandwidth", c.kde_bandwidth}};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig config;
  CLI::App app{"Evidential token uncertainty and hidden-state probing toolkit", "evprobe"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key-value config file (key = value per line)");

  app.add_option("--dataset", config.dataset, "Trace dataset (.evpt)");
  app.add_option("--labels", config.labels, "Label JSONL (default <dataset>.labels.jsonl)");
  app.add_option("--questions", config.questions, "Question JSONL with id/answer (label)");
  app.add_option("--k_evidence", config.k_evidence, "Top logits used as evidence")->capture_default_str();
  app.add_option("--transform", config.transform, "relu | softplus | shift-min")->capture_default_str();
  app.add_option("--au_form", config.au_form, "verbatim | alpha")->capture_default_str();
  app.add_option("--k_agg", config.k_agg, "Tokens averaged by LogTokU")->capture_default_str();
  app.add_option("--k_bound", config.k_bound, "Tokens in lower/upper bounds")->capture_default_str();
  app.add_option("--tau_c", config.tau_c, "Mostly-correct threshold")->capture_default_str();
  app.add_option("--tau_e", config.tau_e, "Mostly-wrong threshold")->capture_default_str();
  app.add_option("--theta", config.theta, "Fallback judge F1 threshold")->capture_default_str();
  app.add_option("--layers", config.layers, "Layers to sweep (default: all stored)");
  app.add_option("--selections", config.selections, "Token selections to sweep");
  app.add_option("--rank_by", config.rank_by, "Token ranking score: eu | au")->capture_default_str();
  app.add_option("--l2", config.l2, "Probe L2 penalty")->capture_default_str();
  app.add_option("--max_iter", config.max_iter, "Probe iterations")->capture_default_str();
  app.add_option("--tol", config.tol, "Probe gradient-norm tolerance")->capture_default_str();
  app.add_option("--split_seed", config.split_seed, "Train/test split seed")->capture_default_str();
  app.add_option("--threads", config.threads, "Sweep worker threads")->capture_default_str();
  app.add_option("--transitions", config.transitions, "Transitions like WOC:E->WCC:C");
  app.add_option("--kde_score", config.kde_score, "eu_lower | eu_upper | au_lower | au_upper | rel_lower | rel_upper")
      ->capture_default_str();
  app.add_option("--pooling", config.pooling, "response | question")->capture_default_str();
  app.add_option("--kde_bandwidth", config.kde_bandwidth, "Fixed KDE bandwidth (0: Silverman)")
      ->capture_default_str();
  app.add_option("--output_dir", config.output_dir, "Output directory")
      ->capture_default_str();

  std::string synth_kind = "probe";
  std::uint64_t synth_seed = 7;

  auto add_cmd = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    return sub;
  };
  auto* validate = add_cmd("validate", "Check dataset integrity and label coverage");
  auto* score = add_cmd("score", "Per-response LogProb, LogTokU, P(True) and bounds");
  auto* regimes = add_cmd("regimes", "Correctness ratios and regimes per question/condition");
  auto* transitions = add_cmd("transitions", "Regime transitions with score summaries");
  auto* kde = add_cmd("kde", "Density curves of transition score samples");
  auto* sweep = add_cmd("sweep", "Probe AUROC per layer and token selection");
  auto* report = add_cmd("report", "score + regimes + transitions + kde + sweep");
  auto* label = add_cmd("label", "Fallback exact-match / token-F1 labelling");
  auto* synth = add_cmd("synth", "Write a planted synthetic dataset and labels");
  synth->add_option("--kind", synth_kind, "probe | behavior")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();

  std::vector<std::string> argv(args.rbegin(), args.rend() - 1);
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }
  // Precedence is flag > environment > config file, so only a flag on the
  // command line itself blocks the environment override.
  const bool output_flag = std::any_of(args.begin() + 1, args.end(), [](const std::string& a) {
    return a == "--output_dir" || a.starts_with("--output_dir=");
  });
  if (!output_flag) {
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) config.output_dir = env;
  }

  try {
    check_config(config);
    if (validate->parsed()) return cmd_validate(config, out, err);
    if (score->parsed()) return cmd_score(config, out, err);
    if (regimes->parsed()) return cmd_regimes(config, out, err);
    if (transitions->parsed()) return cmd_transitions(config, out, err);
    if (kde->parsed()) return cmd_kde(config, out, err);
    if (sweep->parsed()) return cmd_sweep(config, out, err);
    if (report->parsed()) return run_all(config, out, err);
    if (label->parsed()) return cmd_label(config, out, err);
    if (synth->parsed()) {
      if (config.dataset.empty()) fail(ErrorKind::Config, "synth needs --dataset");
      synthetic::SyntheticDataset data;
      if (synth_kind == "probe") {
        synthetic::PlantedProbeSpec spec;
        spec.seed = synth_seed;
        data = synthetic::make_planted_probe_dataset(spec);
      } else if (synth_kind == "behavior") {
        auto spec = synthetic::default_behavior_spec();
        spec.seed = synth_seed;
        data = synthetic::make_behavior_dataset(spec);
      } else {
        fail(ErrorKind::Config, "synth --kind must be probe or behavior");
      }
      synthetic::write_dataset(data, config.dataset, labels_path(config));
      out << "wrote " << data.traces.size() << " traces to " << config.dataset.string()
          << " and labels to " << labels_path(config).string() << '\n';
      return kExitOk;
    }
  } catch (const Error& ex) {
    err << "error (" << to_string(ex.kind()) << "): " << ex.what() << '\n';
    return ex.kind() == ErrorKind::Config ? kExitConfig : kExitData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace evprobe::cli
