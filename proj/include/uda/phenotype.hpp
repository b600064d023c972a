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

#ifndef UDA_PHENOTYPE_HPP_
#define UDA_PHENOTYPE_HPP_

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "uda/fraction.hpp"

namespace uda::phenotype {

// MOAKS sub-grade vocabulary. Names are "<feature>.<subregion>":
//   cartilage.* and bml.* over the femoral (F), tibial (T) and patellar (P)
//   subregions, meniscus.medial / meniscus.lateral.
// Medial TFJ:  FMC FMP TMA TMC TMP (+ S for bml)
// Lateral TFJ: FLC FLP TLA TLC TLP
// PFJ:         PM PL FMA FLA
struct SubgradeInfo {
  std::string_view name;
  int max_grade;
};

inline constexpr std::size_t kNumSubgrades = 31;
const std::array<SubgradeInfo, kNumSubgrades>& vocabulary();

// Index into vocabulary(), or nullopt for an unknown name.
std::optional<std::size_t> subgrade_index(std::string_view name);

enum class KneeSide { kLeft, kRight };
enum class Sex { kMale, kFemale };

struct MoaksRecord {
  std::string subject_id;
  KneeSide knee_side = KneeSide::kLeft;
  std::array<std::optional<int>, kNumSubgrades> grades{};

  // Throws ErrorKind::kArgument for unknown names or out-of-range grades.
  void set(std::string_view name, std::optional<int> grade);
  std::optional<int> get(std::string_view name) const;
};

struct PhenotypeLabel {
  std::optional<bool> cartilage_meniscus;
  std::optional<bool> subchondral_bone;

  friend bool operator==(const PhenotypeLabel&, const PhenotypeLabel&) = default;
};

enum class Phenotype { kCartilageMeniscus, kSubchondralBone };
std::string_view phenotype_name(Phenotype p);
Phenotype parse_phenotype(std::string_view name);
std::optional<bool> label_of(const PhenotypeLabel& label, Phenotype p);

enum class CmpOp { kGe, kGt, kLe, kLt, kEq };

// A threshold test over one or more sub-grades. With several sub-grades the
// quantifier decides whether any or all of them must pass.
struct Condition {
  enum class Quantifier { kAny, kAll };
  Quantifier quantifier = Quantifier::kAny;
  std::vector<std::size_t> subgrades;
  CmpOp op = CmpOp::kGe;
  int threshold = 0;

  friend bool operator==(const Condition&, const Condition&) = default;
};

struct RuleExpr {
  enum class Kind { kCondition, kAnd, kOr };
  Kind kind = Kind::kCondition;
  Condition condition;
  std::vector<RuleExpr> children;

  friend bool operator==(const RuleExpr&, const RuleExpr&) = default;
};

struct PhenotypeRuleSet {
  RuleExpr cartilage_meniscus;
  RuleExpr subchondral_bone;

  friend bool operator==(const PhenotypeRuleSet&, const PhenotypeRuleSet&) = default;
};

// Placeholder thresholds until the clinical definitions are sourced:
//   cartilage_meniscus = any(meniscus.*) >= 2
//                        and any(medial TFJ cartilage) >= 2
//                        and any(lateral TFJ cartilage) >= 2
//   subchondral_bone   = any(bml.*) >= 2
const PhenotypeRuleSet& default_rules();

// Rule text format, one rule per line, '#' starts a comment:
//   cartilage_meniscus = any(meniscus.medial, meniscus.lateral) >= 2 and ...
//   subchondral_bone = any(bml.*) >= 2
// Operands: NAME CMP INT, or any(...)/all(...) CMP INT over names or
// '*'-globs; 'and' binds tighter than 'or'; parentheses group.
// Throws ErrorKind::kConfig on syntax errors or unknown sub-grade names.
PhenotypeRuleSet parse_rules(std::string_view text);
PhenotypeRuleSet load_rules(const std::string& path);
std::string to_text(const PhenotypeRuleSet& rules);

// Sub-grades read by a rule, ascending and unique.
std::vector<std::size_t> referenced_subgrades(const RuleExpr& rule);

// Absent (not false) when any sub-grade the rule reads is missing.
std::optional<bool> evaluate(const RuleExpr& rule, const MoaksRecord& record);
PhenotypeLabel to_phenotypes(const MoaksRecord& record, const PhenotypeRuleSet& rules);

// Optional per-knee metadata that rides along in the MOAKS table.
struct SubjectInfo {
  std::string subject_id;
  std::optional<KneeSide> knee_side;
  std::optional<Sex> sex;
  std::optional<double> age;
  std::optional<double> bmi;
  PhenotypeLabel label;
};

struct MoaksTable {
  std::vector<MoaksRecord> records;
  std::vector<SubjectInfo> info;  // parallel to records
};

// Delimited text (comma or tab, picked from the header line). Required
// columns: subject_id, knee_side. Optional: age, bmi, sex, and any
// vocabulary sub-grade. Empty, "NA" and "." cells are missing.
MoaksTable read_moaks_table(std::istream& in);
MoaksTable read_moaks_table_file(const std::string& path);

// Keeps every positive and a seeded uniform sample of negatives so that
// positives make up positive_fraction of the result. The negative count is
// positives*(1-f)/f rounded half-up. Output keeps input order.
std::vector<std::string> balance_dataset(
    const std::vector<std::pair<std::string, bool>>& labels,
    Fraction positive_fraction, std::uint64_t seed);

struct DemographicsRow {
  enum class Kind { kMeanSd, kPercent };
  std::string characteristic;
  Kind kind = Kind::kPercent;
  double mean = 0.0;
  double sd = 0.0;
  std::int64_t num = 0;  // percent rows: count; mean rows: unused
  std::int64_t den = 0;  // non-missing records for this field
  std::string text;      // "61.08 ± 8.97" or "39.92 (1244/3116)"
};

// Mean/sd use the n-1 denominator (sd = 0 for a single value).
std::vector<DemographicsRow> demographics_summary(const std::vector<SubjectInfo>& records);

}  // namespace uda::phenotype

#endif  // UDA_PHENOTYPE_HPP_
