/*
 * Copyright 2026 The udakit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// udakit: one subcommand per pipeline stage. Every command validates its
// inputs, stages its outputs in a sibling temporary directory and renames
// it into place, and leaves report.json plus resolved_config.json behind.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "uda/dataio.hpp"
#include "uda/error.hpp"
#include "uda/metrics.hpp"
#include "uda/model.hpp"
#include "uda/phenotype.hpp"
#include "uda/preprocess.hpp"
#include "uda/training.hpp"
#include "uda/volume_io.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uda;

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Output staging

class OutputDir {
 public:
  OutputDir(fs::path final_path, bool overwrite) : final_(std::move(final_path)) {
    require(!final_.empty(), ErrorKind::kArgument, "output path is empty");
    require(overwrite || !fs::exists(final_), ErrorKind::kArgument,
            "output path exists (pass --overwrite to replace it): " + final_.string());
    const fs::path parent = final_.has_parent_path() ? final_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    tmp_ = parent / ("." + final_.filename().string() + ".partial-" + std::to_string(::getpid()));
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;
  ~OutputDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

  const fs::path& path() const { return tmp_; }

  void commit() {
    if (fs::exists(final_)) fs::remove_all(final_);
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path tmp_;
  bool committed_ = false;
};

void write_json(const fs::path& path, const json& j) { io::write_text_atomic(path, j.dump(2) + "\n"); }

void write_lines(const fs::path& path, const std::vector<json>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  io::write_text_atomic(path, text);
}

fs::path default_out(const std::string& command) {
  const char* root = std::getenv("UDAKIT_OUT_ROOT");
  return fs::path(root && *root ? root : "udakit-out") / command;
}

// ---------------------------------------------------------------------------
// Configuration

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  require(fs::exists(path), ErrorKind::kConfig, "config file not found: " + path);
  try {
    json j = json::parse(io::read_text(path));
    require(j.is_object(), ErrorKind::kConfig, path + ": top level must be an object");
    return j;
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, path + ": " + e.what());
  }
}

// key.path=value; value is parsed as JSON when possible, else kept as text.
void apply_overrides(json& cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::kConfig, "--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq);
    const std::string text = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    json* node = &cfg;
    std::stringstream ks(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ks, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      json& next = (*node)[parts[i]];
      if (!next.is_object()) next = json::object();
      node = &next;
    }
    (*node)[parts.back()] = value;
  }
}

json section(const json& cfg, const char* key) {
  if (!cfg.contains(key)) return json::object();
  require(cfg.at(key).is_object(), ErrorKind::kConfig, std::string("config section '") + key + "' must be an object");
  return cfg.at(key);
}

train::SourceTrainConfig resolve_train_config(json j, std::uint64_t seed, Shape3 input_shape) {
  const std::string preset = j.value("preset", "full");
  require(preset == "full" || preset == "desk", ErrorKind::kConfig, "train.preset must be 'full' or 'desk'");
  j.erase("preset");
  json base = (preset == "desk" ? train::SourceTrainConfig::desk_scale() : train::SourceTrainConfig{}).to_json();
  base.merge_patch(j);
  base["seed"] = seed;
  base["encoder"]["input_shape"] = {input_shape.x, input_shape.y, input_shape.z};
  return train::SourceTrainConfig::from_json(base);
}

train::AdaptConfig resolve_adapt_config(json j, std::uint64_t seed) {
  json base = train::AdaptConfig{}.to_json();
  base.merge_patch(j);
  base["seed"] = seed;
  return train::AdaptConfig::from_json(base);
}

struct EvalSettings {
  double threshold = 0.5;
  int bootstrap_resamples = 100;

  json to_json() const { return {{"threshold", threshold}, {"bootstrap_resamples", bootstrap_resamples}}; }
};

EvalSettings resolve_eval(const json& j) {
  EvalSettings e;
  try {
    if (j.contains("threshold")) e.threshold = j.at("threshold").get<double>();
    if (j.contains("bootstrap_resamples")) e.bootstrap_resamples = j.at("bootstrap_resamples").get<int>();
  } catch (const json::exception& ex) {
    fail(ErrorKind::kConfig, std::string("evaluation config: ") + ex.what());
  }
  require(e.threshold > 0.0 && e.threshold < 1.0, ErrorKind::kConfig, "evaluation.threshold must lie in (0, 1)");
  require(e.bootstrap_resamples >= 0, ErrorKind::kConfig, "evaluation.bootstrap_resamples must be >= 0");
  return e;
}

Shape3 parse_shape(const std::string& text, const char* what) {
  Shape3 s;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  in >> s.x >> c1 >> s.y >> c2 >> s.z;
  require(in && !in.rdbuf()->in_avail() && c1 == ',' && c2 == ',' && s.positive(), ErrorKind::kArgument,
          std::string(what) + " expects X,Y,Z with positive integers, got '" + text + "'");
  return s;
}

json shape_json(Shape3 s) { return {s.x, s.y, s.z}; }

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  data::DatasetManifest manifest;
  std::vector<VolumeSample> samples;
};

Dataset load_dataset(const std::string& path) {
  Dataset d;
  d.manifest = data::load_manifest(path);
  d.samples = data::load_samples(d.manifest);
  require(!d.samples.empty(), ErrorKind::kManifestMalformed, "manifest has no entries: " + path);
  return d;
}

Shape3 common_shape(const std::vector<VolumeSample>& samples, const std::string& what) {
  const Shape3 s = samples.front().shape();
  for (const auto& v : samples) {
    require(v.shape() == s, ErrorKind::kArgument, what + ": volumes differ in shape; run `udakit preprocess` first");
  }
  return s;
}

int label_or_fail(const VolumeSample& s, phenotype::Phenotype p) {
  const auto l = phenotype::label_of(s.label, p);
  require(l.has_value(), ErrorKind::kArgument,
          "sample '" + s.sample_id + "' has no " + std::string(phenotype::phenotype_name(p)) + " label");
  return *l ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Predictions files: CSV with header sample_id,score,prediction[,label]

struct PredictionRow {
  std::string sample_id;
  double score = 0.0;
  int prediction = 0;
  std::optional<int> label;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

int parse_binary(const std::string& s, const std::string& where) {
  require(s == "0" || s == "1", ErrorKind::kArgument, where + ": expected 0 or 1, got '" + s + "'");
  return s == "1";
}

std::vector<PredictionRow> read_predictions(const std::string& path, double threshold) {
  require(fs::exists(path), ErrorKind::kIo, "predictions file not found: " + path);
  std::istringstream in(io::read_text(path));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kArgument, path + ": empty file");
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  require(col.count("sample_id") && (col.count("score") || col.count("prediction")), ErrorKind::kArgument,
          path + ": header needs sample_id and score and/or prediction");
  std::vector<PredictionRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    const std::string where = path + ":" + std::to_string(lineno);
    require(cells.size() == header.size(), ErrorKind::kArgument, where + ": wrong number of columns");
    PredictionRow r;
    r.sample_id = cells[col["sample_id"]];
    if (col.count("score")) {
      try {
        r.score = std::stod(cells[col["score"]]);
      } catch (const std::exception&) {
        fail(ErrorKind::kArgument, where + ": bad score");
      }
    }
    r.prediction = col.count("prediction") ? parse_binary(cells[col["prediction"]], where) : r.score >= threshold;
    if (!col.count("score")) r.score = r.prediction;
    if (col.count("label") && !cells[col["label"]].empty()) r.label = parse_binary(cells[col["label"]], where);
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), ErrorKind::kArgument, path + ": no prediction rows");
  return rows;
}

std::map<std::string, int> read_labels(const std::string& path) {
  require(fs::exists(path), ErrorKind::kIo, "labels file not found: " + path);
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  const auto header = split_csv(line);
  require(header.size() >= 2 && header[0] == "sample_id" && header[1] == "label", ErrorKind::kArgument,
          path + ": header must start with sample_id,label");
  std::map<std::string, int> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    const std::string where = path + ":" + std::to_string(lineno);
    require(cells.size() >= 2, ErrorKind::kArgument, where + ": wrong number of columns");
    require(out.emplace(cells[0], parse_binary(cells[1], where)).second, ErrorKind::kArgument,
            where + ": duplicate sample_id");
  }
  return out;
}

void attach_labels(std::vector<PredictionRow>& rows, const std::map<std::string, int>& labels) {
  for (auto& r : rows) {
    const auto it = labels.find(r.sample_id);
    require(it != labels.end(), ErrorKind::kArgument, "no label for sample '" + r.sample_id + "'");
    r.label = it->second;
  }
}

std::string predictions_csv(const std::vector<PredictionRow>& rows) {
  std::string out = "sample_id,score,prediction,label\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.score);
    out += r.sample_id + "," + buf + "," + std::to_string(r.prediction) + "," +
           (r.label ? std::to_string(*r.label) : std::string()) + "\n";
  }
  return out;
}

eval::EvalReport report_for(const std::vector<PredictionRow>& rows, const EvalSettings& es, std::uint64_t seed) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& r : rows) {
    require(r.label.has_value(), ErrorKind::kArgument, "sample '" + r.sample_id + "' has no label");
    scores.push_back(r.score);
    labels.push_back(*r.label);
  }
  return eval::make_eval_report(scores, labels, es.threshold, es.bootstrap_resamples, seed);
}

// ---------------------------------------------------------------------------
// Common command plumbing

struct Common {
  std::string out;
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool overwrite = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  cmd->add_option("--out", c.out, "Output directory (default: $UDAKIT_OUT_ROOT/<command>)");
  cmd->add_option("--seed", c.seed, "Global seed");
  cmd->add_flag("--overwrite", c.overwrite, "Replace an existing output directory");
  if (with_config) {
    cmd->add_option("--config", c.config, "JSON configuration file");
    cmd->add_option("--set", c.sets, "Override a config entry, key.path=value (repeatable)");
  }
}

json load_merged(const Common& c) {
  json cfg = load_config(c.config);
  apply_overrides(cfg, c.sets);
  return cfg;
}

fs::path out_path(const Common& c, const std::string& command) { return c.out.empty() ? default_out(command) : fs::path(c.out); }

json resolved(const std::string& command, const Common& c, json inputs, json config) {
  return {{"command", command},
          {"udakit_version", kVersion},
          {"seed", c.seed},
          {"inputs", std::move(inputs)},
          {"config", std::move(config)}};
}

void finish(OutputDir& out, const json& report, const json& resolved_cfg) {
  write_json(out.path() / "report.json", report);
  write_json(out.path() / "resolved_config.json", resolved_cfg);
  out.commit();
}

// ---------------------------------------------------------------------------
// Commands

struct SynthArgs {
  Common c;
  int n_source = 200;
  int n_target = 40;
  std::string preset = "default";
};

void run_synth(const SynthArgs& a) {
  json cfg = load_merged(a.c);
  json shift = section(cfg, "shift");
  if (!shift.contains("preset")) shift["preset"] = a.preset;
  const data::ShiftParams params = data::ShiftParams::from_json(shift);
  require(a.n_source >= 1 && a.n_target >= 1, ErrorKind::kArgument, "--n-source and --n-target must be >= 1");

  OutputDir out(out_path(a.c, "synth"), a.c.overwrite);
  json report = {{"command", "synth"}};
  for (const Domain d : {Domain::kSource, Domain::kTarget}) {
    const std::string name(domain_name(d));
    const int n = d == Domain::kSource ? a.n_source : a.n_target;
    const std::uint64_t seed = derive_seed(a.c.seed, "synth-" + name);
    const auto samples = data::generate_synthetic(n, d, params, seed);
    json meta = {{"generator", "udakit synth"}, {"domain", name}, {"seed", a.c.seed}, {"shift", params.to_json()}};
    data::write_dataset(samples, out.path() / name, meta);
    int positives = 0;
    for (const auto& s : samples) positives += s.label.subchondral_bone.value_or(false);
    report[name] = {{"n", n},
                    {"positives", positives},
                    {"manifest", name + "/manifest.json"},
                    {"shape", shape_json(params.style(d).shape)}};
  }
  finish(out, report,
         resolved("synth", a.c, json::object(),
                  {{"n_source", a.n_source}, {"n_target", a.n_target}, {"shift", params.to_json()}}));
}

struct PreprocessArgs {
  Common c;
  std::string manifest;
  std::string roi = "48,48,24";
  std::string resize = "64,64,32";
  bool no_zscore = false;
};

void run_preprocess(const PreprocessArgs& a) {
  preprocess::PreprocessConfig pc;
  pc.resize_shape = parse_shape(a.resize, "--resize");
  pc.roi_shape = parse_shape(a.roi, "--roi");
  pc.zscore = !a.no_zscore;
  const Dataset in = load_dataset(a.manifest);
  for (const auto& s : in.samples) {
    require(s.mask.has_value(), ErrorKind::kLocalization,
            "sample '" + s.sample_id + "' has no segmentation mask to localize the ROI");
  }
  const json pcj = {{"resize", shape_json(pc.resize_shape)}, {"roi", shape_json(pc.roi_shape)}, {"zscore", pc.zscore}};

  OutputDir out(out_path(a.c, "preprocess"), a.c.overwrite);
  std::vector<VolumeSample> done;
  json centers = json::array();
  for (const auto& s : in.samples) {
    done.push_back(preprocess::preprocess_sample(s, pc));
    const Index3 c = preprocess::locate_roi(preprocess::resize_mask(*s.mask, pc.resize_shape), pc.roi_shape);
    centers.push_back({{"sample_id", s.sample_id}, {"roi_center", {c.x, c.y, c.z}}});
  }
  json meta = in.manifest.metadata;
  meta["preprocess"] = pcj;
  data::DatasetManifest m = data::write_dataset(done, out.path(), meta);
  for (std::size_t i = 0; i < m.entries.size(); ++i) m.entries[i].split = in.manifest.entries[i].split;
  data::save_manifest(m, out.path() / "manifest.json");
  finish(out, {{"command", "preprocess"}, {"n", done.size()}, {"preprocess", pcj}, {"samples", centers}},
         resolved("preprocess", a.c, {{"manifest", a.manifest}}, pcj));
}

struct TrainArgs {
  Common c;
  std::string manifest;
  std::string phenotype = "subchondral_bone";
};

std::vector<train::LabeledVolume> labeled(const std::vector<const VolumeSample*>& v, phenotype::Phenotype p) {
  std::vector<train::LabeledVolume> out;
  for (const auto* s : v) out.push_back({s->sample_id, s->voxels, label_or_fail(*s, p)});
  return out;
}

void run_train_source(const TrainArgs& a) {
  const json cfg = load_merged(a.c);
  const phenotype::Phenotype ph = phenotype::parse_phenotype(a.phenotype);
  const Dataset ds = load_dataset(a.manifest);
  const Shape3 shape = common_shape(ds.samples, "train-source");
  const train::SourceTrainConfig tc = resolve_train_config(section(cfg, "train"), a.c.seed, shape);
  const EvalSettings es = resolve_eval(section(cfg, "evaluation"));
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
  if (cfg.contains("split") && cfg.at("split").contains("fractions")) {
    const auto f = cfg.at("split").at("fractions").get<std::vector<double>>();
    require(f.size() == 3, ErrorKind::kConfig, "split.fractions needs three entries");
    fractions = {f[0], f[1], f[2]};
  }

  std::vector<std::string> ids;
  std::vector<int> labels;
  std::map<std::string, const VolumeSample*> by_id;
  std::size_t skipped = 0;
  for (const auto& s : ds.samples) {
    const auto l = phenotype::label_of(s.label, ph);
    if (!l) {
      ++skipped;
      continue;
    }
    ids.push_back(s.sample_id);
    labels.push_back(*l);
    by_id[s.sample_id] = &s;
  }
  const eval::SplitResult split = eval::split_source(ids, labels, fractions, derive_seed(a.c.seed, "source-split"));
  auto pick = [&](const std::vector<std::string>& v) {
    std::vector<const VolumeSample*> out;
    for (const auto& id : v) out.push_back(by_id.at(id));
    return out;
  };

  OutputDir out(out_path(a.c, "train-source"), a.c.overwrite);
  const train::SourceTrainResult r = train::train_source(labeled(pick(split.train), ph), labeled(pick(split.val), ph), tc);
  nn::Checkpoint ck = r.checkpoint;
  ck.metadata["phenotype"] = a.phenotype;
  nn::save_checkpoint(ck, out.path() / "checkpoint");
  std::vector<json> trace;
  for (const auto& e : r.trace) trace.push_back(train::to_json(e));
  write_lines(out.path() / "trace.jsonl", trace);
  write_json(out.path() / "splits.json", {{"train", split.train}, {"val", split.val}, {"test", split.test}});

  std::vector<const Grid3<float>*> test_vols;
  for (const auto* s : pick(split.test)) test_vols.push_back(&s->voxels);
  const std::vector<double> scores = r.model.predict(test_vols);
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto* s = by_id.at(split.test[i]);
    rows.push_back({s->sample_id, scores[i], scores[i] >= es.threshold, label_or_fail(*s, ph)});
  }
  io::write_text_atomic(out.path() / "test_predictions.csv", predictions_csv(rows));
  const eval::EvalReport er = report_for(rows, es, derive_seed(a.c.seed, "test-bootstrap"));

  json report = {{"command", "train-source"},
                 {"phenotype", a.phenotype},
                 {"n_train", split.train.size()},
                 {"n_val", split.val.size()},
                 {"n_test", split.test.size()},
                 {"n_unlabeled_skipped", skipped},
                 {"best_epoch", r.best_epoch},
                 {"best_val_auprc", r.best_auprc},
                 {"epochs_run", r.epochs_run},
                 {"test", eval::to_json(er)}};
  finish(out, report,
         resolved("train-source", a.c, {{"manifest", a.manifest}, {"phenotype", a.phenotype}},
                  {{"train", tc.to_json()},
                   {"evaluation", es.to_json()},
                   {"split", {{"fractions", fractions}}}}));
}

struct AdaptArgs {
  Common c;
  std::string source_ckpt;
  std::string source_manifest;
  std::string target_manifest;
};

std::vector<UnlabeledVolume> unlabeled(const std::vector<VolumeSample>& v) {
  std::vector<UnlabeledVolume> out;
  for (const auto& s : v) out.push_back(strip_labels(s));
  return out;
}

void run_adapt(const AdaptArgs& a) {
  const json cfg = load_merged(a.c);
  const train::AdaptConfig ac = resolve_adapt_config(section(cfg, "adapt"), a.c.seed);
  const train::Classifier source = train::Classifier::from_checkpoint(nn::load_checkpoint(a.source_ckpt));
  const Dataset src = load_dataset(a.source_manifest);
  const Dataset tgt = load_dataset(a.target_manifest);

  OutputDir out(out_path(a.c, "adapt"), a.c.overwrite);
  const train::AdaptResult r = train::adapt_target(source, unlabeled(src.samples), unlabeled(tgt.samples), ac);
  nn::Checkpoint ck = r.checkpoint;
  nn::save_checkpoint(ck, out.path() / "checkpoint");
  std::vector<json> trace;
  for (const auto& e : r.trace) trace.push_back(train::to_json(e));
  write_lines(out.path() / "trace.jsonl", trace);
  json report = {{"command", "adapt"},
                 {"n_source", src.samples.size()},
                 {"n_target", tgt.samples.size()},
                 {"epochs", ac.epochs},
                 {"final_epoch", r.trace.empty() ? json(nullptr) : train::to_json(r.trace.back())}};
  finish(out, report,
         resolved("adapt", a.c,
                  {{"source_ckpt", a.source_ckpt},
                   {"source_manifest", a.source_manifest},
                   {"target_manifest", a.target_manifest}},
                  {{"adapt", ac.to_json()}}));
}

struct LoocvArgs {
  Common c;
  std::string target_manifest;
  std::string source_manifest;
  std::string source_ckpt;
  std::string mode = "uda";
  std::string phenotype = "subchondral_bone";
};

void run_loocv(const LoocvArgs& a) {
  const json cfg = load_merged(a.c);
  const phenotype::Phenotype ph = phenotype::parse_phenotype(a.phenotype);
  require(a.mode == "uda" || a.mode == "nonuda" || a.mode == "source", ErrorKind::kArgument,
          "--mode must be uda, nonuda or source");
  const bool needs_source = a.mode != "nonuda";
  require(!needs_source || !a.source_ckpt.empty(), ErrorKind::kArgument, "--mode " + a.mode + " needs --source-ckpt");
  require(a.mode != "uda" || !a.source_manifest.empty(), ErrorKind::kArgument, "--mode uda needs --source-manifest");
  const Dataset tgt = load_dataset(a.target_manifest);
  const Shape3 shape = common_shape(tgt.samples, "loocv");
  const EvalSettings es = resolve_eval(section(cfg, "evaluation"));
  std::vector<int> labels;
  for (const auto& s : tgt.samples) labels.push_back(label_or_fail(s, ph));

  json used = {{"mode", a.mode}, {"phenotype", a.phenotype}, {"evaluation", es.to_json()}};
  std::optional<train::Classifier> source;
  std::vector<UnlabeledVolume> src_unlabeled;
  std::optional<train::AdaptConfig> ac;
  std::optional<train::SourceTrainConfig> tc;
  if (needs_source) source = train::Classifier::from_checkpoint(nn::load_checkpoint(a.source_ckpt));
  if (a.mode == "uda") {
    ac = resolve_adapt_config(section(cfg, "adapt"), a.c.seed);
    src_unlabeled = unlabeled(load_dataset(a.source_manifest).samples);
    used["adapt"] = ac->to_json();
  } else if (a.mode == "nonuda") {
    tc = resolve_train_config(section(cfg, "train"), a.c.seed, shape);
    used["train"] = tc->to_json();
  }

  OutputDir out(out_path(a.c, "loocv"), a.c.overwrite);
  const std::vector<UnlabeledVolume> tgt_unlabeled = unlabeled(tgt.samples);
  auto train_fn = [&](const std::vector<std::size_t>& idx, std::uint64_t seed) -> train::Classifier {
    if (a.mode == "source") return *source;
    if (a.mode == "uda") {
      std::vector<UnlabeledVolume> t;
      for (std::size_t i : idx) t.push_back(tgt_unlabeled[i]);
      train::AdaptConfig fc = *ac;
      fc.seed = seed;
      return train::adapt_target(*source, src_unlabeled, t, fc).target;
    }
    std::vector<train::LabeledVolume> l;
    for (std::size_t i : idx) l.push_back({tgt.samples[i].sample_id, tgt.samples[i].voxels, labels[i]});
    train::SourceTrainConfig fc = *tc;
    fc.seed = seed;
    return train::train_nonuda_baseline(l, fc).model;
  };
  auto eval_fn = [&](const train::Classifier& m, std::size_t i) {
    const double score = m.predict({&tgt.samples[i].voxels}).front();
    return eval::FoldPrediction{score >= es.threshold, score, labels[i]};
  };
  const auto folds = eval::loocv(tgt.samples.size(), a.c.seed, train_fn, eval_fn);

  std::vector<PredictionRow> rows;
  json fj = json::array();
  for (const auto& f : folds) {
    const std::string& id = tgt.samples[f.test_index].sample_id;
    rows.push_back({id, f.result.score, f.result.prediction, f.result.label});
    fj.push_back({{"fold", f.fold},
                  {"test_sample", id},
                  {"n_train", f.train_indices.size()},
                  {"seed", f.seed},
                  {"score", f.result.score},
                  {"prediction", f.result.prediction},
                  {"label", f.result.label}});
  }
  write_json(out.path() / "folds.json", fj);
  io::write_text_atomic(out.path() / "predictions.csv", predictions_csv(rows));
  const eval::EvalReport er = report_for(rows, es, derive_seed(a.c.seed, "loocv-bootstrap"));
  json report = {{"command", "loocv"},
                 {"mode", a.mode},
                 {"phenotype", a.phenotype},
                 {"n_folds", folds.size()},
                 {"evaluation", eval::to_json(er)}};
  finish(out, report,
         resolved("loocv", a.c,
                  {{"target_manifest", a.target_manifest},
                   {"source_manifest", a.source_manifest},
                   {"source_ckpt", a.source_ckpt}},
                  used));
}

struct PredictArgs {
  Common c;
  std::string ckpt;
  std::string manifest;
  std::string phenotype = "subchondral_bone";
  double threshold = 0.5;
};

void run_predict(const PredictArgs& a) {
  const phenotype::Phenotype ph = phenotype::parse_phenotype(a.phenotype);
  require(a.threshold > 0.0 && a.threshold < 1.0, ErrorKind::kArgument, "--threshold must lie in (0, 1)");
  const train::Classifier model = train::Classifier::from_checkpoint(nn::load_checkpoint(a.ckpt));
  const Dataset ds = load_dataset(a.manifest);
  OutputDir out(out_path(a.c, "predict"), a.c.overwrite);
  std::vector<const Grid3<float>*> vols;
  for (const auto& s : ds.samples) vols.push_back(&s.voxels);
  const std::vector<double> scores = model.predict(vols);
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto l = phenotype::label_of(ds.samples[i].label, ph);
    rows.push_back({ds.samples[i].sample_id, scores[i], scores[i] >= a.threshold,
                    l ? std::optional<int>(*l) : std::nullopt});
  }
  io::write_text_atomic(out.path() / "predictions.csv", predictions_csv(rows));
  finish(out, {{"command", "predict"}, {"n", rows.size()}, {"predictions", "predictions.csv"}},
         resolved("predict", a.c, {{"ckpt", a.ckpt}, {"manifest", a.manifest}},
                  {{"threshold", a.threshold}, {"phenotype", a.phenotype}}));
}

struct EvaluateArgs {
  Common c;
  std::string preds;
  std::string labels;
  double threshold = 0.5;
  int bootstrap = 100;
};

void run_evaluate(const EvaluateArgs& a) {
  const EvalSettings es = resolve_eval({{"threshold", a.threshold}, {"bootstrap_resamples", a.bootstrap}});
  auto rows = read_predictions(a.preds, es.threshold);
  if (!a.labels.empty()) attach_labels(rows, read_labels(a.labels));
  OutputDir out(out_path(a.c, "evaluate"), a.c.overwrite);
  const eval::EvalReport er = report_for(rows, es, derive_seed(a.c.seed, "evaluate-bootstrap"));
  finish(out, {{"command", "evaluate"}, {"n", rows.size()}, {"evaluation", eval::to_json(er)}},
         resolved("evaluate", a.c, {{"preds", a.preds}, {"labels", a.labels}}, es.to_json()));
}

struct CompareArgs {
  Common c;
  std::string preds_a;
  std::string preds_b;
  std::string labels;
  double threshold = 0.5;
};

void run_compare(const CompareArgs& a) {
  auto ra = read_predictions(a.preds_a, a.threshold);
  auto rb = read_predictions(a.preds_b, a.threshold);
  if (!a.labels.empty()) {
    const auto l = read_labels(a.labels);
    attach_labels(ra, l);
    attach_labels(rb, l);
  }
  std::map<std::string, const PredictionRow*> b_by;
  for (const auto& r : rb) b_by[r.sample_id] = &r;
  require(ra.size() == rb.size() && b_by.size() == rb.size(), ErrorKind::kArgument,
          "compare: prediction files must cover the same samples once each");
  std::vector<int> pa, pb, lab;
  for (const auto& r : ra) {
    const auto it = b_by.find(r.sample_id);
    require(it != b_by.end(), ErrorKind::kArgument, "compare: sample '" + r.sample_id + "' missing from --preds-b");
    require(r.label.has_value() && it->second->label.has_value(), ErrorKind::kArgument,
            "compare: sample '" + r.sample_id + "' has no label (pass --labels)");
    require(*r.label == *it->second->label, ErrorKind::kArgument,
            "compare: label mismatch for sample '" + r.sample_id + "'");
    pa.push_back(r.prediction);
    pb.push_back(it->second->prediction);
    lab.push_back(*r.label);
  }
  OutputDir out(out_path(a.c, "compare"), a.c.overwrite);
  const json report = {{"command", "compare"},
                       {"n", lab.size()},
                       {"a", eval::to_json(eval::classification_metrics(pa, lab))},
                       {"b", eval::to_json(eval::classification_metrics(pb, lab))},
                       {"mcnemar", eval::to_json(eval::mcnemar(pa, pb, lab))}};
  finish(out, report,
         resolved("compare", a.c, {{"preds_a", a.preds_a}, {"preds_b", a.preds_b}, {"labels", a.labels}},
                  {{"threshold", a.threshold}}));
}

struct PlotArgs {
  Common c;
  std::string preds;
  std::string labels;
  int bootstrap = 100;
};

std::string roc_svg(const eval::EvalReport& er, const std::vector<eval::RocPoint>& curve) {
  constexpr double kSize = 400.0, kPad = 50.0;
  auto px = [&](double fpr) { return kPad + fpr * kSize; };
  auto py = [&](double tpr) { return kPad + (1.0 - tpr) * kSize; };
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" font-family=\"sans-serif\" "
       "font-size=\"12\">\n";
  s << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kSize << "\" height=\"" << kSize
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
    << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  if (er.bootstrap && !er.bootstrap->curves.empty()) {
    const eval::RocBand band = eval::roc_band(er.bootstrap->curves);
    s << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < band.fpr.size(); ++i) s << px(band.fpr[i]) << "," << py(band.max_tpr[i]) << " ";
    for (std::size_t i = band.fpr.size(); i-- > 0;) s << px(band.fpr[i]) << "," << py(band.min_tpr[i]) << " ";
    s << "\"/>\n<polyline fill=\"none\" stroke=\"#3182bd\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < band.fpr.size(); ++i) s << px(band.fpr[i]) << "," << py(band.mean_tpr[i]) << " ";
    s << "\"/>\n";
  }
  s << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
  for (const auto& p : curve) s << px(p.fpr) << "," << py(p.tpr) << " ";
  s << "\"/>\n";
  s << "<text x=\"250\" y=\"490\" text-anchor=\"middle\">False positive rate</text>\n";
  s << "<text x=\"15\" y=\"250\" text-anchor=\"middle\" transform=\"rotate(-90 15 250)\">True positive rate</text>\n";
  if (er.auroc) {
    s << "<text x=\"" << kPad + kSize - 10 << "\" y=\"" << kPad + kSize - 10 << "\" text-anchor=\"end\">AUROC "
      << format_fixed2(*er.auroc);
    if (er.bootstrap) s << " (bootstrap " << format_fixed2(er.bootstrap->mean) << " ± " << format_fixed2(er.bootstrap->sd) << ")";
    s << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void run_plot_roc(const PlotArgs& a) {
  EvalSettings es;
  es.bootstrap_resamples = a.bootstrap;
  auto rows = read_predictions(a.preds, es.threshold);
  if (!a.labels.empty()) attach_labels(rows, read_labels(a.labels));
  OutputDir out(out_path(a.c, "plot-roc"), a.c.overwrite);
  const eval::EvalReport er = report_for(rows, es, derive_seed(a.c.seed, "evaluate-bootstrap"));
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& r : rows) {
    scores.push_back(r.score);
    labels.push_back(*r.label);
  }
  require(er.auroc.has_value(), ErrorKind::kUndefinedMetric, "plot-roc: both classes are needed for a ROC curve");
  io::write_text_atomic(out.path() / "roc.svg", roc_svg(er, eval::roc_curve(scores, labels)));
  finish(out, {{"command", "plot-roc"}, {"image", "roc.svg"}, {"evaluation", eval::to_json(er)}},
         resolved("plot-roc", a.c, {{"preds", a.preds}, {"labels", a.labels}}, {{"bootstrap_resamples", a.bootstrap}}));
}

struct LabelArgs {
  Common c;
  std::string moaks;
  std::string rules;
  std::string balance;
  std::string phenotype = "subchondral_bone";
};

void run_label(const LabelArgs& a) {
  const phenotype::PhenotypeRuleSet rules = a.rules.empty() ? phenotype::default_rules() : phenotype::load_rules(a.rules);
  const phenotype::Phenotype ph = phenotype::parse_phenotype(a.phenotype);
  std::optional<Fraction> frac;
  if (!a.balance.empty()) {
    const auto slash = a.balance.find('/');
    try {
      frac = slash == std::string::npos ? Fraction{std::stoll(a.balance), 1}
                                        : Fraction{std::stoll(a.balance.substr(0, slash)), std::stoll(a.balance.substr(slash + 1))};
    } catch (const std::exception&) {
      fail(ErrorKind::kArgument, "--balance expects a fraction such as 1/3");
    }
  }
  phenotype::MoaksTable table = phenotype::read_moaks_table_file(a.moaks);

  OutputDir out(out_path(a.c, "label"), a.c.overwrite);
  std::string csv = "subject_id,knee_side,cartilage_meniscus,subchondral_bone\n";
  auto cell = [](const std::optional<bool>& v) { return v ? std::string(*v ? "1" : "0") : std::string(); };
  std::vector<std::pair<std::string, bool>> for_balance;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    auto& info = table.info[i];
    info.label = phenotype::to_phenotypes(table.records[i], rules);
    const std::string side = table.records[i].knee_side == phenotype::KneeSide::kLeft ? "left" : "right";
    csv += info.subject_id + "," + side + "," + cell(info.label.cartilage_meniscus) + "," +
           cell(info.label.subchondral_bone) + "\n";
    if (const auto l = phenotype::label_of(info.label, ph)) for_balance.emplace_back(info.subject_id + ":" + side, *l);
  }
  io::write_text_atomic(out.path() / "labels.csv", csv);
  json demo = json::array();
  for (const auto& row : phenotype::demographics_summary(table.info)) {
    demo.push_back({{"characteristic", row.characteristic}, {"value", row.text}});
  }
  json report = {{"command", "label"}, {"n_records", table.records.size()}, {"demographics", demo}};
  if (frac) {
    const auto kept = phenotype::balance_dataset(for_balance, *frac, derive_seed(a.c.seed, "label-balance"));
    report["balanced"] = {{"phenotype", a.phenotype}, {"fraction", a.balance}, {"n", kept.size()}, {"ids", kept}};
  }
  finish(out, report,
         resolved("label", a.c, {{"moaks", a.moaks}, {"rules", a.rules}},
                  {{"rules", phenotype::to_text(rules)}, {"balance", a.balance}, {"phenotype", a.phenotype}}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"udakit: domain adaptation toolkit for knee MRI phenotype classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate synthetic source and target datasets");
  add_common(c_synth, synth.c);
  c_synth->add_option("--n-source", synth.n_source, "Number of source samples");
  c_synth->add_option("--n-target", synth.n_target, "Number of target samples");
  c_synth->add_option("--shift-preset", synth.preset, "Shift preset: default, none, strong");

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Resize, crop the ROI and normalize a dataset");
  add_common(c_pre, pre.c, false);
  c_pre->add_option("--manifest", pre.manifest, "Input manifest")->required();
  c_pre->add_option("--roi", pre.roi, "ROI crop shape X,Y,Z");
  c_pre->add_option("--resize", pre.resize, "Resize shape X,Y,Z");
  c_pre->add_flag("--no-zscore", pre.no_zscore, "Skip per-volume z-score normalization");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-source", "Split the source dataset and train the source classifier");
  add_common(c_tr, tr.c);
  c_tr->add_option("--manifest", tr.manifest, "Source manifest")->required();
  c_tr->add_option("--phenotype", tr.phenotype, "cartilage_meniscus or subchondral_bone");

  AdaptArgs ad;
  auto* c_ad = app.add_subcommand("adapt", "Adversarially adapt a target encoder");
  add_common(c_ad, ad.c);
  c_ad->add_option("--source-ckpt", ad.source_ckpt, "Source classifier checkpoint directory")->required();
  c_ad->add_option("--source-manifest", ad.source_manifest, "Source manifest")->required();
  c_ad->add_option("--target-manifest", ad.target_manifest, "Target manifest")->required();

  LoocvArgs lo;
  auto* c_lo = app.add_subcommand("loocv", "Leave-one-out evaluation on the target dataset");
  add_common(c_lo, lo.c);
  c_lo->add_option("--target-manifest", lo.target_manifest, "Target manifest")->required();
  c_lo->add_option("--mode", lo.mode, "uda, nonuda or source");
  c_lo->add_option("--source-ckpt", lo.source_ckpt, "Source classifier checkpoint (uda, source)");
  c_lo->add_option("--source-manifest", lo.source_manifest, "Source manifest streamed during adaptation (uda)");
  c_lo->add_option("--phenotype", lo.phenotype, "cartilage_meniscus or subchondral_bone");

  PredictArgs pr;
  auto* c_pr = app.add_subcommand("predict", "Score a dataset with a classifier checkpoint");
  add_common(c_pr, pr.c, false);
  c_pr->add_option("--ckpt", pr.ckpt, "Classifier checkpoint directory")->required();
  c_pr->add_option("--manifest", pr.manifest, "Dataset manifest")->required();
  c_pr->add_option("--phenotype", pr.phenotype, "Label column copied into the output");
  c_pr->add_option("--threshold", pr.threshold, "Decision threshold");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Metrics for one predictions file");
  add_common(c_ev, ev.c, false);
  c_ev->add_option("--preds", ev.preds, "Predictions CSV")->required();
  c_ev->add_option("--labels", ev.labels, "Labels CSV (sample_id,label)");
  c_ev->add_option("--threshold", ev.threshold, "Decision threshold for score-only files");
  c_ev->add_option("--bootstrap", ev.bootstrap, "Bootstrap resamples");

  CompareArgs cm;
  auto* c_cm = app.add_subcommand("compare", "Metrics for two classifiers plus McNemar's test");
  add_common(c_cm, cm.c, false);
  c_cm->add_option("--preds-a", cm.preds_a, "Predictions CSV of classifier A")->required();
  c_cm->add_option("--preds-b", cm.preds_b, "Predictions CSV of classifier B")->required();
  c_cm->add_option("--labels", cm.labels, "Labels CSV (sample_id,label)");
  c_cm->add_option("--threshold", cm.threshold, "Decision threshold for score-only files");

  PlotArgs pl;
  auto* c_pl = app.add_subcommand("plot-roc", "ROC curve with bootstrap band as SVG");
  add_common(c_pl, pl.c, false);
  c_pl->add_option("--preds", pl.preds, "Predictions CSV")->required();
  c_pl->add_option("--labels", pl.labels, "Labels CSV (sample_id,label)");
  c_pl->add_option("--bootstrap", pl.bootstrap, "Bootstrap resamples");

  LabelArgs la;
  auto* c_la = app.add_subcommand("label", "Derive phenotype labels and demographics from a MOAKS table");
  add_common(c_la, la.c, false);
  c_la->add_option("--moaks", la.moaks, "MOAKS table (CSV or TSV)")->required();
  c_la->add_option("--rules", la.rules, "Phenotype rule file");
  c_la->add_option("--balance", la.balance, "Positive fraction for balancing, e.g. 1/3");
  c_la->add_option("--phenotype", la.phenotype, "Phenotype used for balancing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kArgument);
  }

  const std::map<CLI::App*, std::function<void()>> handlers = {
      {c_synth, [&] { run_synth(synth); }},  {c_pre, [&] { run_preprocess(pre); }},
      {c_tr, [&] { run_train_source(tr); }}, {c_ad, [&] { run_adapt(ad); }},
      {c_lo, [&] { run_loocv(lo); }},        {c_ev, [&] { run_evaluate(ev); }},
      {c_pr, [&] { run_predict(pr); }},
      {c_cm, [&] { run_compare(cm); }},      {c_pl, [&] { run_plot_roc(pl); }},
      {c_la, [&] { run_label(la); }},
  };
  try {
    for (const auto& [cmd, fn] : handlers) {
      if (cmd->parsed()) fn();
    }
  } catch (const Error& e) {
    std::cerr << "udakit: " << error_kind_name(e.kind()) << ": " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "udakit: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
