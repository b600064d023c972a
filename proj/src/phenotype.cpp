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

#include "uda/phenotype.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "uda/error.hpp"
#include "uda/random.hpp"

namespace uda::phenotype {

namespace {

constexpr std::array<SubgradeInfo, kNumSubgrades> kVocabulary = {{
    {"cartilage.PM", 3},  {"cartilage.PL", 3},  {"cartilage.FMA", 3}, {"cartilage.FLA", 3},
    {"cartilage.FMC", 3}, {"cartilage.FLC", 3}, {"cartilage.FMP", 3}, {"cartilage.FLP", 3},
    {"cartilage.TMA", 3}, {"cartilage.TMC", 3}, {"cartilage.TMP", 3}, {"cartilage.TLA", 3},
    {"cartilage.TLC", 3}, {"cartilage.TLP", 3},
    {"meniscus.medial", 4}, {"meniscus.lateral", 4},
    {"bml.PM", 3},  {"bml.PL", 3},  {"bml.FMA", 3}, {"bml.FLA", 3}, {"bml.FMC", 3},
    {"bml.FLC", 3}, {"bml.FMP", 3}, {"bml.FLP", 3}, {"bml.TMA", 3}, {"bml.TMC", 3},
    {"bml.TMP", 3}, {"bml.TLA", 3}, {"bml.TLC", 3}, {"bml.TLP", 3}, {"bml.S", 3},
}};

bool glob_match(std::string_view pattern, std::string_view name) {
  // '*' matches any run of characters
  std::size_t p = 0, n = 0, star = std::string_view::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && pattern[p] == name[n]) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::vector<std::size_t> expand_pattern(std::string_view pattern) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kVocabulary.size(); ++i) {
    if (glob_match(pattern, kVocabulary[i].name)) out.push_back(i);
  }
  if (out.empty()) {
    fail(ErrorKind::kConfig, "phenotype rules: unknown sub-grade '" + std::string(pattern) + "'");
  }
  return out;
}

bool compare(int grade, CmpOp op, int threshold) {
  switch (op) {
    case CmpOp::kGe: return grade >= threshold;
    case CmpOp::kGt: return grade > threshold;
    case CmpOp::kLe: return grade <= threshold;
    case CmpOp::kLt: return grade < threshold;
    case CmpOp::kEq: return grade == threshold;
  }
  return false;
}

const char* op_text(CmpOp op) {
  switch (op) {
    case CmpOp::kGe: return ">=";
    case CmpOp::kGt: return ">";
    case CmpOp::kLe: return "<=";
    case CmpOp::kLt: return "<";
    case CmpOp::kEq: return "==";
  }
  return "?";
}

// --- rule parser -----------------------------------------------------------

struct Token {
  enum class Kind { kName, kNumber, kLParen, kRParen, kComma, kCmp, kEnd };
  Kind kind;
  std::string text;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) {
    std::size_t i = 0;
    while (i < src.size()) {
      const char c = src[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
      } else if (c == '(') {
        tokens_.push_back({Token::Kind::kLParen, "("});
        ++i;
      } else if (c == ')') {
        tokens_.push_back({Token::Kind::kRParen, ")"});
        ++i;
      } else if (c == ',') {
        tokens_.push_back({Token::Kind::kComma, ","});
        ++i;
      } else if (c == '<' || c == '>' || c == '=') {
        std::string op(1, c);
        if (i + 1 < src.size() && src[i + 1] == '=') op += '=';
        if (op == "=") fail(ErrorKind::kConfig, "phenotype rules: stray '=' in expression");
        tokens_.push_back({Token::Kind::kCmp, op});
        i += op.size();
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        std::size_t j = i;
        while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
        tokens_.push_back({Token::Kind::kNumber, std::string(src.substr(i, j - i))});
        i = j;
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '*') {
        std::size_t j = i;
        while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) ||
                                  src[j] == '_' || src[j] == '.' || src[j] == '*')) {
          ++j;
        }
        tokens_.push_back({Token::Kind::kName, std::string(src.substr(i, j - i))});
        i = j;
      } else {
        fail(ErrorKind::kConfig, std::string("phenotype rules: unexpected character '") + c + "'");
      }
    }
    tokens_.push_back({Token::Kind::kEnd, ""});
  }

  const Token& peek() const { return tokens_[pos_]; }
  Token next() { return tokens_[pos_ == tokens_.size() - 1 ? pos_ : pos_++]; }

  Token expect(Token::Kind kind, const char* what) {
    if (peek().kind != kind) {
      fail(ErrorKind::kConfig, std::string("phenotype rules: expected ") + what + " near '" +
                                   peek().text + "'");
    }
    return next();
  }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

CmpOp parse_op(const std::string& s) {
  if (s == ">=") return CmpOp::kGe;
  if (s == ">") return CmpOp::kGt;
  if (s == "<=") return CmpOp::kLe;
  if (s == "<") return CmpOp::kLt;
  if (s == "==") return CmpOp::kEq;
  fail(ErrorKind::kConfig, "phenotype rules: bad comparison '" + s + "'");
}

RuleExpr parse_or(Lexer& lx);

RuleExpr parse_atom(Lexer& lx) {
  if (lx.peek().kind == Token::Kind::kLParen) {
    lx.next();
    RuleExpr inner = parse_or(lx);
    lx.expect(Token::Kind::kRParen, "')'");
    return inner;
  }
  const Token name = lx.expect(Token::Kind::kName, "sub-grade or any()/all()");
  RuleExpr leaf;
  leaf.kind = RuleExpr::Kind::kCondition;
  if ((name.text == "any" || name.text == "all") && lx.peek().kind == Token::Kind::kLParen) {
    leaf.condition.quantifier =
        name.text == "any" ? Condition::Quantifier::kAny : Condition::Quantifier::kAll;
    lx.next();
    for (;;) {
      const Token pat = lx.expect(Token::Kind::kName, "sub-grade name");
      for (std::size_t idx : expand_pattern(pat.text)) leaf.condition.subgrades.push_back(idx);
      if (lx.peek().kind == Token::Kind::kComma) {
        lx.next();
        continue;
      }
      lx.expect(Token::Kind::kRParen, "')'");
      break;
    }
  } else {
    leaf.condition.subgrades = expand_pattern(name.text);
    if (leaf.condition.subgrades.size() > 1) {
      fail(ErrorKind::kConfig,
           "phenotype rules: glob '" + name.text + "' needs an any() or all() quantifier");
    }
  }
  auto& sg = leaf.condition.subgrades;
  std::sort(sg.begin(), sg.end());
  sg.erase(std::unique(sg.begin(), sg.end()), sg.end());
  leaf.condition.op = parse_op(lx.expect(Token::Kind::kCmp, "comparison").text);
  leaf.condition.threshold = std::stoi(lx.expect(Token::Kind::kNumber, "integer threshold").text);
  return leaf;
}

RuleExpr parse_and(Lexer& lx) {
  RuleExpr first = parse_atom(lx);
  if (!(lx.peek().kind == Token::Kind::kName && lx.peek().text == "and")) return first;
  RuleExpr node;
  node.kind = RuleExpr::Kind::kAnd;
  node.children.push_back(std::move(first));
  while (lx.peek().kind == Token::Kind::kName && lx.peek().text == "and") {
    lx.next();
    node.children.push_back(parse_atom(lx));
  }
  return node;
}

RuleExpr parse_or(Lexer& lx) {
  RuleExpr first = parse_and(lx);
  if (!(lx.peek().kind == Token::Kind::kName && lx.peek().text == "or")) return first;
  RuleExpr node;
  node.kind = RuleExpr::Kind::kOr;
  node.children.push_back(std::move(first));
  while (lx.peek().kind == Token::Kind::kName && lx.peek().text == "or") {
    lx.next();
    node.children.push_back(parse_and(lx));
  }
  return node;
}

RuleExpr parse_expression(std::string_view text) {
  Lexer lx(text);
  RuleExpr e = parse_or(lx);
  if (lx.peek().kind != Token::Kind::kEnd) {
    fail(ErrorKind::kConfig, "phenotype rules: trailing input near '" + lx.peek().text + "'");
  }
  return e;
}

void write_expr(std::ostream& os, const RuleExpr& e, bool nested) {
  if (e.kind == RuleExpr::Kind::kCondition) {
    const Condition& c = e.condition;
    if (c.subgrades.size() == 1) {
      os << kVocabulary[c.subgrades[0]].name;
    } else {
      os << (c.quantifier == Condition::Quantifier::kAny ? "any(" : "all(");
      for (std::size_t i = 0; i < c.subgrades.size(); ++i) {
        if (i) os << ", ";
        os << kVocabulary[c.subgrades[i]].name;
      }
      os << ')';
    }
    os << ' ' << op_text(c.op) << ' ' << c.threshold;
    return;
  }
  const char* joiner = e.kind == RuleExpr::Kind::kAnd ? " and " : " or ";
  if (nested) os << '(';
  for (std::size_t i = 0; i < e.children.size(); ++i) {
    if (i) os << joiner;
    write_expr(os, e.children[i], true);
  }
  if (nested) os << ')';
}

void collect(const RuleExpr& e, std::vector<std::size_t>& out) {
  if (e.kind == RuleExpr::Kind::kCondition) {
    out.insert(out.end(), e.condition.subgrades.begin(), e.condition.subgrades.end());
  }
  for (const auto& c : e.children) collect(c, out);
}

bool eval_complete(const RuleExpr& e, const MoaksRecord& r) {
  switch (e.kind) {
    case RuleExpr::Kind::kCondition: {
      const Condition& c = e.condition;
      if (c.quantifier == Condition::Quantifier::kAny) {
        return std::any_of(c.subgrades.begin(), c.subgrades.end(),
                           [&](std::size_t i) { return compare(*r.grades[i], c.op, c.threshold); });
      }
      return std::all_of(c.subgrades.begin(), c.subgrades.end(),
                         [&](std::size_t i) { return compare(*r.grades[i], c.op, c.threshold); });
    }
    case RuleExpr::Kind::kAnd:
      return std::all_of(e.children.begin(), e.children.end(),
                         [&](const RuleExpr& c) { return eval_complete(c, r); });
    case RuleExpr::Kind::kOr:
      return std::any_of(e.children.begin(), e.children.end(),
                         [&](const RuleExpr& c) { return eval_complete(c, r); });
  }
  return false;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

bool is_missing(const std::string& cell) { return cell.empty() || cell == "NA" || cell == "."; }

double parse_double(const std::string& cell, const std::string& column) {
  try {
    std::size_t used = 0;
    double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::kArgument, "MOAKS table: bad number '" + cell + "' in column " + column);
  }
}

}  // namespace

const std::array<SubgradeInfo, kNumSubgrades>& vocabulary() { return kVocabulary; }

std::optional<std::size_t> subgrade_index(std::string_view name) {
  for (std::size_t i = 0; i < kVocabulary.size(); ++i) {
    if (kVocabulary[i].name == name) return i;
  }
  return std::nullopt;
}

void MoaksRecord::set(std::string_view name, std::optional<int> grade) {
  const auto idx = subgrade_index(name);
  require(idx.has_value(), ErrorKind::kArgument, "unknown MOAKS sub-grade '" + std::string(name) + "'");
  if (grade && (*grade < 0 || *grade > kVocabulary[*idx].max_grade)) {
    fail(ErrorKind::kArgument, "MOAKS grade " + std::to_string(*grade) + " out of range for " +
                                   std::string(name));
  }
  grades[*idx] = grade;
}

std::optional<int> MoaksRecord::get(std::string_view name) const {
  const auto idx = subgrade_index(name);
  require(idx.has_value(), ErrorKind::kArgument, "unknown MOAKS sub-grade '" + std::string(name) + "'");
  return grades[*idx];
}

std::string_view phenotype_name(Phenotype p) {
  return p == Phenotype::kCartilageMeniscus ? "cartilage_meniscus" : "subchondral_bone";
}

Phenotype parse_phenotype(std::string_view name) {
  if (name == "cartilage_meniscus") return Phenotype::kCartilageMeniscus;
  if (name == "subchondral_bone") return Phenotype::kSubchondralBone;
  fail(ErrorKind::kConfig, "unknown phenotype '" + std::string(name) + "'");
}

std::optional<bool> label_of(const PhenotypeLabel& label, Phenotype p) {
  return p == Phenotype::kCartilageMeniscus ? label.cartilage_meniscus : label.subchondral_bone;
}

const PhenotypeRuleSet& default_rules() {
  static const PhenotypeRuleSet rules = parse_rules(
      "cartilage_meniscus = any(meniscus.medial, meniscus.lateral) >= 2"
      " and any(cartilage.FMC, cartilage.FMP, cartilage.TMA, cartilage.TMC, cartilage.TMP) >= 2"
      " and any(cartilage.FLC, cartilage.FLP, cartilage.TLA, cartilage.TLC, cartilage.TLP) >= 2\n"
      "subchondral_bone = any(bml.*) >= 2\n");
  return rules;
}

PhenotypeRuleSet parse_rules(std::string_view text) {
  std::optional<RuleExpr> cm, sb;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq + 1 >= line.size() || line[eq + 1] == '=') {
      fail(ErrorKind::kConfig, "phenotype rules line " + std::to_string(lineno) +
                                   ": expected '<phenotype> = <expression>'");
    }
    const std::string name = trim(std::string_view(line).substr(0, eq));
    RuleExpr expr = parse_expression(std::string_view(line).substr(eq + 1));
    std::optional<RuleExpr>* slot = nullptr;
    if (name == "cartilage_meniscus") slot = &cm;
    else if (name == "subchondral_bone") slot = &sb;
    else fail(ErrorKind::kConfig, "phenotype rules: unknown phenotype '" + name + "'");
    if (slot->has_value()) fail(ErrorKind::kConfig, "phenotype rules: duplicate rule for " + name);
    *slot = std::move(expr);
  }
  if (!cm || !sb) {
    fail(ErrorKind::kConfig, "phenotype rules: both cartilage_meniscus and subchondral_bone are required");
  }
  return {std::move(*cm), std::move(*sb)};
}

PhenotypeRuleSet load_rules(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open rule file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rules(ss.str());
}

std::string to_text(const PhenotypeRuleSet& rules) {
  std::ostringstream os;
  os << "cartilage_meniscus = ";
  write_expr(os, rules.cartilage_meniscus, false);
  os << "\nsubchondral_bone = ";
  write_expr(os, rules.subchondral_bone, false);
  os << '\n';
  return os.str();
}

std::vector<std::size_t> referenced_subgrades(const RuleExpr& rule) {
  std::vector<std::size_t> out;
  collect(rule, out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::optional<bool> evaluate(const RuleExpr& rule, const MoaksRecord& record) {
  for (std::size_t idx : referenced_subgrades(rule)) {
    if (idx >= kNumSubgrades) fail(ErrorKind::kConfig, "phenotype rules: sub-grade index out of range");
    if (!record.grades[idx]) return std::nullopt;
  }
  return eval_complete(rule, record);
}

PhenotypeLabel to_phenotypes(const MoaksRecord& record, const PhenotypeRuleSet& rules) {
  return {evaluate(rules.cartilage_meniscus, record), evaluate(rules.subchondral_bone, record)};
}

MoaksTable read_moaks_table(std::istream& in) {
  std::string header;
  require(static_cast<bool>(std::getline(in, header)), ErrorKind::kArgument, "MOAKS table: empty input");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const char delim = header.find('\t') != std::string::npos ? '\t' : ',';
  const std::vector<std::string> columns = split_line(header, delim);

  enum class Col { kId, kSide, kAge, kBmi, kSex, kGrade };
  std::vector<std::pair<Col, std::size_t>> layout;
  bool has_id = false, has_side = false;
  for (const auto& c : columns) {
    if (c == "subject_id") { layout.push_back({Col::kId, 0}); has_id = true; }
    else if (c == "knee_side") { layout.push_back({Col::kSide, 0}); has_side = true; }
    else if (c == "age") layout.push_back({Col::kAge, 0});
    else if (c == "bmi") layout.push_back({Col::kBmi, 0});
    else if (c == "sex") layout.push_back({Col::kSex, 0});
    else if (auto idx = subgrade_index(c)) layout.push_back({Col::kGrade, *idx});
    else fail(ErrorKind::kConfig, "MOAKS table: unknown column '" + c + "'");
  }
  require(has_id && has_side, ErrorKind::kConfig, "MOAKS table: subject_id and knee_side columns are required");

  MoaksTable table;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_line(line, delim);
    if (cells.size() != columns.size()) {
      fail(ErrorKind::kArgument, "MOAKS table line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(columns.size()) + " cells, got " +
                                     std::to_string(cells.size()));
    }
    MoaksRecord rec;
    SubjectInfo info;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string& cell = cells[i];
      switch (layout[i].first) {
        case Col::kId:
          rec.subject_id = cell;
          break;
        case Col::kSide: {
          const std::string s = lower(cell);
          if (s == "left" || s == "l") rec.knee_side = KneeSide::kLeft;
          else if (s == "right" || s == "r") rec.knee_side = KneeSide::kRight;
          else fail(ErrorKind::kArgument, "MOAKS table: bad knee_side '" + cell + "'");
          info.knee_side = rec.knee_side;
          break;
        }
        case Col::kAge:
          if (!is_missing(cell)) info.age = parse_double(cell, "age");
          break;
        case Col::kBmi:
          if (!is_missing(cell)) info.bmi = parse_double(cell, "bmi");
          break;
        case Col::kSex: {
          if (is_missing(cell)) break;
          const std::string s = lower(cell);
          if (s == "m" || s == "male") info.sex = Sex::kMale;
          else if (s == "f" || s == "female") info.sex = Sex::kFemale;
          else fail(ErrorKind::kArgument, "MOAKS table: bad sex '" + cell + "'");
          break;
        }
        case Col::kGrade: {
          if (is_missing(cell)) break;
          const double g = parse_double(cell, columns[i]);
          if (g != std::floor(g)) fail(ErrorKind::kArgument, "MOAKS table: non-integer grade in " + columns[i]);
          rec.set(kVocabulary[layout[i].second].name, static_cast<int>(g));
          break;
        }
      }
    }
    require(!rec.subject_id.empty(), ErrorKind::kArgument,
            "MOAKS table line " + std::to_string(lineno) + ": empty subject_id");
    info.subject_id = rec.subject_id;
    table.records.push_back(std::move(rec));
    table.info.push_back(std::move(info));
  }
  return table;
}

MoaksTable read_moaks_table_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open MOAKS table " + path);
  return read_moaks_table(in);
}

std::vector<std::string> balance_dataset(const std::vector<std::pair<std::string, bool>>& labels,
                                         Fraction positive_fraction, std::uint64_t seed) {
  const std::int64_t num = positive_fraction.num;
  const std::int64_t den = positive_fraction.den;
  require(num > 0 && den > num, ErrorKind::kBalancing, "balance_dataset: positive_fraction must lie in (0, 1)");

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i].second ? pos : neg).push_back(i);
  require(!pos.empty(), ErrorKind::kBalancing, "balance_dataset: no positive samples");

  const auto p = static_cast<std::int64_t>(pos.size());
  // round_half_up(p * (den - num) / num)
  const std::int64_t wanted = (2 * p * (den - num) + num) / (2 * num);
  if (wanted > static_cast<std::int64_t>(neg.size())) {
    fail(ErrorKind::kBalancing, "balance_dataset: need " + std::to_string(wanted) + " negatives, have " +
                                    std::to_string(neg.size()));
  }

  // partial Fisher-Yates: the first `wanted` slots are the sample
  Rng rng(derive_seed(seed, "balance"));
  for (std::int64_t i = 0; i < wanted; ++i) {
    const auto remaining = static_cast<std::uint64_t>(neg.size() - static_cast<std::size_t>(i));
    const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(uniform_index(rng, remaining));
    std::swap(neg[static_cast<std::size_t>(i)], neg[j]);
  }
  std::vector<std::size_t> keep(pos);
  keep.insert(keep.end(), neg.begin(), neg.begin() + wanted);
  std::sort(keep.begin(), keep.end());

  std::vector<std::string> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(labels[i].first);
  return out;
}

std::vector<DemographicsRow> demographics_summary(const std::vector<SubjectInfo>& records) {
  std::vector<DemographicsRow> rows;
  if (records.empty()) return rows;

  auto mean_row = [&](const char* name, auto getter) {
    std::vector<double> vals;
    for (const auto& r : records) {
      if (auto v = getter(r)) vals.push_back(*v);
    }
    if (vals.empty()) return;
    DemographicsRow row;
    row.characteristic = name;
    row.kind = DemographicsRow::Kind::kMeanSd;
    row.den = static_cast<std::int64_t>(vals.size());
    double sum = 0.0;
    for (double v : vals) sum += v;
    row.mean = sum / static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - row.mean) * (v - row.mean);
    row.sd = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
    row.text = format_fixed2(row.mean) + " ± " + format_fixed2(row.sd);
    rows.push_back(std::move(row));
  };
  auto pct_row = [&](const char* name, auto predicate) {
    std::int64_t num = 0, den = 0;
    for (const auto& r : records) {
      if (auto v = predicate(r)) {
        ++den;
        if (*v) ++num;
      }
    }
    if (den == 0) return;
    DemographicsRow row;
    row.characteristic = name;
    row.kind = DemographicsRow::Kind::kPercent;
    row.num = num;
    row.den = den;
    row.text = format_percent_with_counts(num, den);
    rows.push_back(std::move(row));
  };
  using OptB = std::optional<bool>;
  mean_row("Age", [](const SubjectInfo& r) { return r.age; });
  mean_row("BMI", [](const SubjectInfo& r) { return r.bmi; });
  pct_row("Male", [](const SubjectInfo& r) { return r.sex ? OptB(*r.sex == Sex::kMale) : OptB(); });
  pct_row("Female", [](const SubjectInfo& r) { return r.sex ? OptB(*r.sex == Sex::kFemale) : OptB(); });
  pct_row("Left knee", [](const SubjectInfo& r) { return r.knee_side ? OptB(*r.knee_side == KneeSide::kLeft) : OptB(); });
  pct_row("Right knee", [](const SubjectInfo& r) { return r.knee_side ? OptB(*r.knee_side == KneeSide::kRight) : OptB(); });
  pct_row("Cartilage/meniscus", [](const SubjectInfo& r) { return r.label.cartilage_meniscus; });
  pct_row("Subchondral bone", [](const SubjectInfo& r) { return r.label.subchondral_bone; });
  return rows;
}

}  // namespace uda::phenotype
