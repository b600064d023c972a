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

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::path(UDAKIT_TEST_TMP) / "cli";

int run(const std::string& args) {
  const std::string cmd = std::string("cd '") + kRoot.string() + "' && '" + UDAKIT_BIN + "' " + args +
                          " > last_stdout.txt 2> last_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Predictions with the given confusion counts and matching labels.
void confusion_fixture(const std::string& stem, int tp, int fn, int tn, int fp) {
  std::ostringstream preds, labels;
  preds << "sample_id,prediction\n";
  labels << "sample_id,label\n";
  int id = 0;
  auto emit = [&](int count, int pred, int label) {
    for (int i = 0; i < count; ++i, ++id) {
      preds << "k" << id << "," << pred << "\n";
      labels << "k" << id << "," << label << "\n";
    }
  };
  emit(tp, 1, 1);
  emit(fn, 0, 1);
  emit(tn, 0, 0);
  emit(fp, 1, 0);
  write(kRoot / (stem + "_preds.csv"), preds.str());
  write(kRoot / (stem + "_labels.csv"), labels.str());
}

struct Setup {
  Setup() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write(kRoot / "small.json",
          R"({"shift": {"source": {"shape": [24, 24, 12]}, "target": {"shape": [24, 24, 12]}},
              "train": {"preset": "desk", "max_epochs": 1, "augment": false},
              "adapt": {"epochs": 1, "discriminator_hidden": [16]},
              "evaluation": {"bootstrap_resamples": 5}})");
  }
};

const Setup setup_once;

}  // namespace

TEST_CASE("synth is reproducible") {
  REQUIRE(run("synth --config small.json --n-source 6 --n-target 3 --seed 4 --out s1") == 0);
  REQUIRE(run("synth --config small.json --n-source 6 --n-target 3 --seed 4 --out s2") == 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(kRoot / "s1")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), kRoot / "s1");
    CHECK_MESSAGE(slurp(e.path()) == slurp(kRoot / "s2" / rel), rel.string());
  }
  CHECK(files == 2 + (6 + 3) * 4 + 2);
  const json report = read_json(kRoot / "s1" / "report.json");
  CHECK(report["source"]["n"] == 6);
  CHECK(report["source"]["positives"] == 2);
  CHECK(report["target"]["positives"] == 1);
  CHECK(read_json(kRoot / "s1" / "resolved_config.json")["seed"] == 4);

  REQUIRE(run("synth --config small.json --n-source 6 --n-target 3 --seed 5 --out s3") == 0);
  CHECK(slurp(kRoot / "s1/source/src-0000.f32") != slurp(kRoot / "s3/source/src-0000.f32"));
}

TEST_CASE("compare reproduces exact percentages") {
  confusion_fixture("uda_cm", 2, 2, 45, 1);
  confusion_fixture("base_cm", 1, 3, 34, 12);
  REQUIRE(run("compare --preds-a uda_cm_preds.csv --preds-b base_cm_preds.csv --labels uda_cm_labels.csv --out cmp") ==
          0);
  const json r = read_json(kRoot / "cmp" / "report.json");
  CHECK(r["a"]["sensitivity"]["percent"] == "50");
  CHECK(r["a"]["specificity"]["percent"] == "97.83");
  CHECK(r["a"]["accuracy"]["percent"] == "94");
  CHECK(r["b"]["sensitivity"]["percent"] == "25");
  CHECK(r["b"]["specificity"]["percent"] == "73.91");
  CHECK(r["b"]["accuracy"]["percent"] == "70");
  CHECK(r["a"]["specificity"]["numerator"] == 45);
  CHECK(r["a"]["specificity"]["denominator"] == 46);

  confusion_fixture("uda_sb", 3, 2, 30, 15);
  confusion_fixture("base_sb", 3, 2, 19, 26);
  REQUIRE(run("evaluate --preds uda_sb_preds.csv --labels uda_sb_labels.csv --out ev") == 0);
  const json e = read_json(kRoot / "ev" / "report.json");
  CHECK(e["evaluation"]["sensitivity"]["percent"] == "60");
  CHECK(e["evaluation"]["specificity"]["percent"] == "66.67");
  CHECK(e["evaluation"]["accuracy"]["percent"] == "66");
  REQUIRE(run("evaluate --preds base_sb_preds.csv --labels base_sb_labels.csv --out ev2") == 0);
  const json e2 = read_json(kRoot / "ev2" / "report.json");
  CHECK(e2["evaluation"]["specificity"]["percent"] == "42.22");
  CHECK(e2["evaluation"]["accuracy"]["percent"] == "44");
}

TEST_CASE("pipeline through leave-one-out") {
  REQUIRE(run("synth --config small.json --n-source 30 --n-target 3 --seed 1 --out data") == 0);
  REQUIRE(run("preprocess --manifest data/source/manifest.json --resize 24,24,12 --roi 16,16,8 --out ps") == 0);
  REQUIRE(run("preprocess --manifest data/target/manifest.json --resize 24,24,12 --roi 16,16,8 --out pt") == 0);
  REQUIRE(run("train-source --config small.json --manifest ps/manifest.json --seed 2 --out tr") == 0);
  CHECK(fs::exists(kRoot / "tr" / "checkpoint" / "checkpoint.json"));
  const json splits = read_json(kRoot / "tr" / "splits.json");
  CHECK(splits["train"].size() + splits["val"].size() + splits["test"].size() == 30);

  REQUIRE(run("loocv --config small.json --mode uda --target-manifest pt/manifest.json --source-ckpt tr/checkpoint "
              "--source-manifest ps/manifest.json --seed 3 --out lo") == 0);
  const json folds = read_json(kRoot / "lo" / "folds.json");
  REQUIRE(folds.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(folds[i]["n_train"] == 2);
    CHECK(folds[i]["test_sample"] == "tgt-000" + std::to_string(i));
  }
  const std::string csv = slurp(kRoot / "lo" / "predictions.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  REQUIRE(run("predict --ckpt tr/checkpoint --manifest pt/manifest.json --out pr") == 0);
  CHECK(fs::exists(kRoot / "pr" / "predictions.csv"));
}

TEST_CASE("exit codes") {
  CHECK(run("--help") == 0);
  CHECK(run("synth --no-such-flag") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("predict --ckpt tr/checkpoint --manifest nowhere.json --out x1") == 4);
  CHECK(run("synth --set shift.prevalence=2 --out x2") == 3);
  CHECK(run("synth --set broken --out x3") == 3);
  REQUIRE(run("synth --config small.json --n-source 2 --n-target 2 --out once") == 0);
  CHECK(run("synth --config small.json --n-source 2 --n-target 2 --out once") == 2);
  CHECK(run("synth --config small.json --n-source 2 --n-target 2 --out once --overwrite") == 0);

  json m = read_json(kRoot / "once" / "source" / "manifest.json");
  m["entries"][1]["sample_id"] = m["entries"][0]["sample_id"];
  write(kRoot / "once" / "source" / "dup.json", m.dump());
  CHECK(run("predict --ckpt tr/checkpoint --manifest once/source/dup.json --out x4") == 6);
  m["entries"][1]["sample_id"] = "other";
  m["entries"][1]["volume"] = "missing.json";
  write(kRoot / "once" / "source" / "miss.json", m.dump());
  CHECK(run("predict --ckpt tr/checkpoint --manifest once/source/miss.json --out x5") == 5);
  CHECK(slurp(kRoot / "last_stderr.txt").find("missing.json") != std::string::npos);
  write(kRoot / "once" / "source" / "bad.json", "{\"entries\": 1}");
  CHECK(run("predict --ckpt tr/checkpoint --manifest once/source/bad.json --out x6") == 7);
  CHECK(run("loocv --target-manifest once/target/manifest.json --mode nope --out x7") != 0);
  // failed runs leave no output behind
  CHECK_FALSE(fs::exists(kRoot / "x4"));
  CHECK_FALSE(fs::exists(kRoot / "x5"));
}
