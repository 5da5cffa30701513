// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>

namespace retlab::bench {

extern const char* const kPoolsJson;

using nlohmann::json;

std::string formulation_name(Formulation f) {
  switch (f) {
    case Formulation::Equations:
      return "equations";
    case Formulation::LivesWith:
      return "lives_with";
    case Formulation::Kingdoms:
      return "kingdoms";
    case Formulation::Functions:
      return "functions";
    case Formulation::Relatives:
      return "relatives";
  }
  return "?";
}

Formulation parse_formulation(const std::string& text) {
  for (Formulation f : kAllFormulations) {
    if (formulation_name(f) == text) return f;
  }
  throw std::invalid_argument("unknown formulation '" + text +
                              "' (expected equations, lives_with, kingdoms, functions or relatives)");
}

const json& pools() {
  static const json data = json::parse(kPoolsJson);
  return data;
}

namespace {

std::vector<std::string> pool(const char* key, size_t need) {
  const auto& p = pools().at(key);
  std::vector<std::string> out;
  if (p.is_string()) {
    for (char c : p.get<std::string>()) out.emplace_back(1, c);
  } else {
    out = p.get<std::vector<std::string>>();
  }
  if (out.size() < need) {
    throw PoolError(std::string("pool '") + key + "' has " + std::to_string(out.size()) + " entries, " +
                    std::to_string(need) + " needed");
  }
  out.resize(need);
  return out;
}

std::vector<int> permutation(int n, Rng& rng) {
  std::vector<int> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

int pick(int n, Rng& rng) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string join_lines(const std::vector<std::vector<std::string>>& tiers, const std::string& question) {
  std::string out;
  for (const auto& tier : tiers) {
    for (const auto& line : tier) out += line + "\n";
  }
  return out + question;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

void require_chains(int n_chains, int lo, int hi) {
  if (n_chains < lo || n_chains > hi) {
    throw PoolError("n_chains must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " +
                    std::to_string(n_chains));
  }
}

// Symbol of chain c in tier t is names[t * n + perm[t][c]].
PromptCase gen_equations(int steps, int n, Rng& rng) {
  require_chains(n, 1, 10);
  if (steps < 1) throw PoolError("equations: D must be >= 1");
  const auto letters = pool("letters", static_cast<size_t>(steps * n));
  std::vector<std::vector<int>> perm;
  for (int t = 0; t < steps; ++t) perm.push_back(permutation(n, rng));
  const auto values = permutation(n, rng);
  auto sym = [&](int t, int c) { return letters[static_cast<size_t>(t * n + perm[t][c])]; };
  std::vector<std::vector<std::string>> tiers(static_cast<size_t>(steps));
  for (int c = 0; c < n; ++c) {
    tiers[0].push_back(sym(0, c) + " = " + std::to_string(values[c]));
    for (int t = 1; t < steps; ++t) tiers[t].push_back(sym(t, c) + " = " + sym(t - 1, c));
  }
  for (auto& tier : tiers) std::shuffle(tier.begin(), tier.end(), rng);
  const int q = pick(n, rng);
  PromptCase pc;
  pc.formulation = Formulation::Equations;
  pc.steps = steps;
  pc.n_chains = n;
  pc.prompt = join_lines(tiers, "What is the value of " + sym(steps - 1, q) +
                                    "? Say directly only the numeric value, without any other words.");
  pc.correct = std::to_string(values[q]);
  for (int v = 0; v < n; ++v) pc.acceptable.push_back(std::to_string(v));
  pc.acceptable = sorted(pc.acceptable);
  return pc;
}

PromptCase gen_lives_with(int steps, int n, Rng& rng) {
  require_chains(n, 1, 1000);
  if (steps < 1) throw PoolError("lives_with: D must be >= 1");
  const auto names = pool("people", static_cast<size_t>(steps * n));
  const auto cities = pool("cities", static_cast<size_t>(n));
  std::vector<std::vector<int>> perm;
  for (int t = 0; t < steps; ++t) perm.push_back(permutation(n, rng));
  const auto city_of = permutation(n, rng);
  auto sym = [&](int t, int c) { return names[static_cast<size_t>(t * n + perm[t][c])]; };
  std::vector<std::vector<std::string>> tiers(static_cast<size_t>(steps));
  for (int c = 0; c < n; ++c) {
    tiers[0].push_back(sym(0, c) + " lives in " + cities[static_cast<size_t>(city_of[c])]);
    for (int t = 1; t < steps; ++t) tiers[t].push_back(sym(t, c) + " lives with " + sym(t - 1, c));
  }
  for (auto& tier : tiers) std::shuffle(tier.begin(), tier.end(), rng);
  const int q = pick(n, rng);
  PromptCase pc;
  pc.formulation = Formulation::LivesWith;
  pc.steps = steps;
  pc.n_chains = n;
  pc.prompt = join_lines(tiers, "Where does " + sym(steps - 1, q) +
                                    " live? Say directly only the name of the city, without any other words.");
  pc.correct = cities[static_cast<size_t>(city_of[q])];
  pc.acceptable = sorted(cities);
  return pc;
}

PromptCase gen_kingdoms(int n, Rng& rng) {
  require_chains(n, 1, 1000);
  const auto people = pool("people", static_cast<size_t>(n));
  const auto kingdoms = pool("kingdoms", static_cast<size_t>(n));
  const auto religions = pool("religions", static_cast<size_t>(n));
  const auto foods = pool("foods", static_cast<size_t>(n));
  const auto minerals = pool("minerals", static_cast<size_t>(n));
  const auto diseases = pool("diseases", static_cast<size_t>(n));
  // chain c: people[c] -> kingdoms[k[c]] -> religions[r[c]] -> ...
  const auto k = permutation(n, rng);
  const auto r = permutation(n, rng);
  const auto f = permutation(n, rng);
  const auto m = permutation(n, rng);
  const auto d = permutation(n, rng);
  std::vector<std::vector<std::string>> tiers(5);
  for (int c = 0; c < n; ++c) {
    const std::string& kingdom = kingdoms[static_cast<size_t>(k[c])];
    const std::string& religion = religions[static_cast<size_t>(r[c])];
    const std::string& food = foods[static_cast<size_t>(f[c])];
    const std::string& mineral = minerals[static_cast<size_t>(m[c])];
    const std::string& disease = diseases[static_cast<size_t>(d[c])];
    tiers[0].push_back(people[static_cast<size_t>(c)] + " lives in " + kingdom + ".");
    tiers[1].push_back(kingdom + "ns believe in " + religion + ".");
    tiers[2].push_back(capitalize(religion.substr(0, religion.size() - 3)) + "ists eat " + food + ".");
    tiers[3].push_back(capitalize(food) + " contains " + mineral + ".");
    tiers[4].push_back(mineral + " causes " + disease + ".");
  }
  for (auto& tier : tiers) std::shuffle(tier.begin(), tier.end(), rng);
  const int q = pick(n, rng);
  PromptCase pc;
  pc.formulation = Formulation::Kingdoms;
  pc.steps = 5;
  pc.n_chains = n;
  pc.prompt =
      join_lines(tiers, "Who has " + diseases[static_cast<size_t>(d[q])] + "? Say directly the name without other words.");
  pc.correct = people[static_cast<size_t>(q)];
  pc.acceptable = sorted(people);
  return pc;
}

PromptCase gen_functions(int n, Rng& rng) {
  require_chains(n, 1, 8);
  const auto letters = pool("letters", static_cast<size_t>(3 * n));
  std::vector<std::vector<int>> table;
  for (int fn = 0; fn < n; ++fn) table.push_back(permutation(n, rng));
  const auto alias_of = permutation(n, rng);  // alias i names function alias_of[i]
  const auto value_of = permutation(n, rng);  // variable i holds value_of[i]
  std::vector<std::vector<std::string>> tiers(3);
  for (int fn = 0; fn < n; ++fn) {
    for (int x = 0; x < n; ++x) {
      tiers[0].push_back(letters[static_cast<size_t>(fn)] + "(" + std::to_string(x) +
                         ") = " + std::to_string(table[fn][x]));
    }
  }
  for (int i = 0; i < n; ++i) {
    tiers[1].push_back(letters[static_cast<size_t>(n + i)] + " = " + letters[static_cast<size_t>(alias_of[i])]);
    tiers[2].push_back(letters[static_cast<size_t>(2 * n + i)] + " = " + std::to_string(value_of[i]));
  }
  std::shuffle(tiers[1].begin(), tiers[1].end(), rng);
  std::shuffle(tiers[2].begin(), tiers[2].end(), rng);
  const int qa = pick(n, rng);
  const int qv = pick(n, rng);
  PromptCase pc;
  pc.formulation = Formulation::Functions;
  pc.steps = 0;
  pc.n_chains = n;
  pc.prompt = join_lines(tiers, "What is the value of " + letters[static_cast<size_t>(n + qa)] + "(" +
                                    letters[static_cast<size_t>(2 * n + qv)] +
                                    ")? Say directly only the numeric value, without any other words.");
  pc.correct = std::to_string(table[alias_of[qa]][value_of[qv]]);
  for (int v = 0; v < n; ++v) pc.acceptable.push_back(std::to_string(v));
  return pc;
}

PromptCase gen_relatives(Rng& rng) {
  const auto subjects = pool("relatives_subjects", 4);
  const auto female = pool("relatives_female", 8);
  const auto male = pool("relatives_male", 8);
  const auto countries = pool("countries", 16);
  const auto relations = pools().at("relations");
  const auto professions = pool("professions", 4);
  if (relations.size() != 4) throw PoolError("relatives: exactly 4 relations expected");

  const auto fperm = permutation(8, rng);
  const auto mperm = permutation(8, rng);
  // relative[s][rel] = person name
  std::vector<std::vector<std::string>> relative(4, std::vector<std::string>(4));
  std::vector<std::string> people;
  for (int s = 0; s < 4; ++s) {
    int fi = 0;
    int mi = 0;
    for (int rel = 0; rel < 4; ++rel) {
      const bool is_female = relations[static_cast<size_t>(rel)][1].get<std::string>() == "female";
      relative[s][rel] = is_female ? female[static_cast<size_t>(fperm[2 * s + fi++])]
                                   : male[static_cast<size_t>(mperm[2 * s + mi++])];
      people.push_back(relative[s][rel]);
    }
  }
  const auto country_perm = permutation(16, rng);
  std::map<std::string, std::string> country_of;
  std::vector<std::string> lives;
  for (size_t i = 0; i < people.size(); ++i) {
    country_of[people[i]] = countries[static_cast<size_t>(country_perm[i])];
    lives.push_back(people[i] + " lives in " + country_of[people[i]] + ".");
  }
  std::shuffle(lives.begin(), lives.end(), rng);
  const auto order = permutation(4, rng);           // subject listing order
  const auto relation_of_prof = permutation(4, rng);  // profession p -> relation
  const auto prof_of_subject = permutation(4, rng);

  std::vector<std::vector<std::string>> tiers{lives, {}, {}, {}};
  for (int s : order) {
    for (int rel = 0; rel < 4; ++rel) {
      tiers[1].push_back(subjects[static_cast<size_t>(s)] + "'s " + relations[static_cast<size_t>(rel)][0].get<std::string>() +
                         " is " + relative[s][rel] + ".");
    }
  }
  for (int p = 0; p < 4; ++p) {
    tiers[2].push_back(capitalize(professions[static_cast<size_t>(p)]) + "s live with their " +
                       relations[static_cast<size_t>(relation_of_prof[p])][0].get<std::string>() + "s.");
  }
  std::shuffle(tiers[2].begin(), tiers[2].end(), rng);
  for (int s : order) {
    const std::string& prof = professions[static_cast<size_t>(prof_of_subject[s])];
    const bool vowel = std::string("aeiou").find(prof[0]) != std::string::npos;
    tiers[3].push_back(subjects[static_cast<size_t>(s)] + " works as " + (vowel ? "an " : "a ") + prof + ".");
  }
  const int q = pick(4, rng);
  PromptCase pc;
  pc.formulation = Formulation::Relatives;
  pc.steps = 0;
  pc.n_chains = 4;
  pc.prompt = join_lines(tiers, "Where does " + subjects[static_cast<size_t>(q)] +
                                    " live? Say directly only the name, without any other words.");
  pc.correct = country_of[relative[q][relation_of_prof[prof_of_subject[q]]]];
  pc.acceptable = sorted(countries);
  return pc;
}

// ---------------------------------------------------------------------------
// Solver: works on the prompt text alone.

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string question_capture(const std::vector<std::string>& lines, const std::regex& re) {
  std::smatch m;
  for (const auto& l : lines) {
    if (std::regex_search(l, m, re)) return m[1];
  }
  throw SolveError("no question line found");
}

bool is_number(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string follow(const std::map<std::string, std::string>& links, std::string from, size_t limit) {
  for (size_t hops = 0; hops <= limit; ++hops) {
    auto it = links.find(from);
    if (it == links.end()) return from;
    from = it->second;
  }
  throw SolveError("cycle while following '" + from + "'");
}

std::string solve_equations(const std::vector<std::string>& lines) {
  static const std::regex assign(R"(^(\w+) = (\w+)$)");
  std::map<std::string, std::string> links;
  std::smatch m;
  for (const auto& l : lines) {
    if (std::regex_match(l, m, assign)) links[m[1]] = m[2];
  }
  const std::string q = question_capture(lines, std::regex(R"(What is the value of (\w+)\?)"));
  const std::string v = follow(links, q, links.size());
  if (!is_number(v)) throw SolveError("chain from '" + q + "' ends at '" + v + "'");
  return v;
}

std::string solve_lives_with(const std::vector<std::string>& lines) {
  static const std::regex in_re(R"(^(\w+) lives in (\w+)\.?$)");
  static const std::regex with_re(R"(^(\w+) lives with (\w+)\.?$)");
  std::map<std::string, std::string> with;
  std::map<std::string, std::string> city;
  std::smatch m;
  for (const auto& l : lines) {
    if (std::regex_match(l, m, in_re)) city[m[1]] = m[2];
    if (std::regex_match(l, m, with_re)) with[m[1]] = m[2];
  }
  const std::string q = question_capture(lines, std::regex(R"(Where does (\w+) live\?)"));
  const std::string root = follow(with, q, with.size());
  auto it = city.find(root);
  if (it == city.end()) throw SolveError("no city for '" + root + "'");
  return it->second;
}

std::string solve_kingdoms(const std::vector<std::string>& lines) {
  static const std::regex lives_re(R"(^(\w+) lives in (\w+)\.$)");
  static const std::regex believe_re(R"(^(\w+)ns believe in (\w+)\.$)");
  static const std::regex eat_re(R"(^(\w+)ists eat (\w+)\.$)");
  static const std::regex contains_re(R"(^(\w+) contains (\w+)\.$)");
  static const std::regex causes_re(R"(^(\w+) causes (\w+)\.$)");
  std::vector<std::pair<std::string, std::string>> people;
  std::map<std::string, std::string> religion_of;  // kingdom -> religion
  std::map<std::string, std::string> food_of;      // religion -> food
  std::map<std::string, std::string> mineral_of;   // food -> mineral
  std::map<std::string, std::string> disease_of;   // mineral -> disease
  std::smatch m;
  for (const auto& l : lines) {
    if (std::regex_match(l, m, lives_re)) {
      people.emplace_back(m[1], m[2]);
    } else if (std::regex_match(l, m, believe_re)) {
      religion_of[std::string(m[1])] = m[2];
    } else if (std::regex_match(l, m, eat_re)) {
      food_of[lower(m[1]) + "ism"] = lower(m[2]);
    } else if (std::regex_match(l, m, contains_re)) {
      mineral_of[lower(m[1])] = m[2];
    } else if (std::regex_match(l, m, causes_re)) {
      disease_of[m[1]] = m[2];
    }
  }
  const std::string q = question_capture(lines, std::regex(R"(Who has (\w+)\?)"));
  std::vector<std::string> hits;
  for (const auto& [person, kingdom] : people) {
    auto rel = religion_of.find(kingdom);
    if (rel == religion_of.end()) continue;
    auto food = food_of.find(rel->second);
    if (food == food_of.end()) continue;
    auto mineral = mineral_of.find(food->second);
    if (mineral == mineral_of.end()) continue;
    auto disease = disease_of.find(mineral->second);
    if (disease != disease_of.end() && disease->second == q) hits.push_back(person);
  }
  if (hits.size() != 1) throw SolveError(std::to_string(hits.size()) + " people lead to '" + q + "'");
  return hits[0];
}

std::string solve_functions(const std::vector<std::string>& lines) {
  static const std::regex table_re(R"(^(\w+)\((\d+)\) = (\d+)$)");
  static const std::regex assign_re(R"(^(\w+) = (\w+)$)");
  std::map<std::pair<std::string, std::string>, std::string> table;
  std::map<std::string, std::string> links;
  std::smatch m;
  for (const auto& l : lines) {
    if (std::regex_match(l, m, table_re)) {
      table[{m[1], m[2]}] = m[3];
    } else if (std::regex_match(l, m, assign_re)) {
      links[m[1]] = m[2];
    }
  }
  std::smatch qm;
  const std::regex q_re(R"(What is the value of (\w+)\((\w+)\)\?)");
  for (const auto& l : lines) {
    if (!std::regex_search(l, qm, q_re)) continue;
    const std::string fn = follow(links, qm[1], links.size());
    const std::string arg = follow(links, qm[2], links.size());
    auto it = table.find({fn, arg});
    if (it == table.end()) throw SolveError("no table entry " + fn + "(" + arg + ")");
    return it->second;
  }
  throw SolveError("no question line found");
}

std::string solve_relatives(const std::vector<std::string>& lines) {
  static const std::regex lives_re(R"(^(\w+) lives in (\w+)\.$)");
  static const std::regex rel_re(R"(^(\w+)'s (\w+) is (\w+)\.$)");
  static const std::regex rule_re(R"(^(\w+)s live with their (\w+)s\.$)");
  static const std::regex works_re(R"(^(\w+) works as an? (\w+)\.$)");
  std::map<std::string, std::string> country;
  std::map<std::pair<std::string, std::string>, std::string> relative;
  std::map<std::string, std::string> rule;
  std::map<std::string, std::string> job;
  std::smatch m;
  for (const auto& l : lines) {
    if (std::regex_match(l, m, lives_re)) {
      country[m[1]] = m[2];
    } else if (std::regex_match(l, m, rel_re)) {
      relative[{m[1], m[2]}] = m[3];
    } else if (std::regex_match(l, m, rule_re)) {
      rule[lower(m[1])] = m[2];
    } else if (std::regex_match(l, m, works_re)) {
      job[m[1]] = lower(m[2]);
    }
  }
  const std::string q = question_capture(lines, std::regex(R"(Where does (\w+) live\?)"));
  auto j = job.find(q);
  if (j == job.end()) throw SolveError("no profession for '" + q + "'");
  auto r = rule.find(j->second);
  if (r == rule.end()) throw SolveError("no rule for '" + j->second + "'");
  auto who = relative.find({q, r->second});
  if (who == relative.end()) throw SolveError("no " + r->second + " for '" + q + "'");
  auto c = country.find(who->second);
  if (c == country.end()) throw SolveError("no country for '" + who->second + "'");
  return c->second;
}

}  // namespace

PromptCase gen_prompt(Formulation f, int steps, int n_chains, Rng& rng) {
  switch (f) {
    case Formulation::Equations:
      return gen_equations(steps, n_chains, rng);
    case Formulation::LivesWith:
      return gen_lives_with(steps, n_chains, rng);
    case Formulation::Kingdoms:
      return gen_kingdoms(n_chains, rng);
    case Formulation::Functions:
      return gen_functions(n_chains, rng);
    case Formulation::Relatives:
      return gen_relatives(rng);
  }
  throw std::logic_error("unhandled formulation");
}

std::string solve_prompt(Formulation f, const std::string& prompt) {
  const auto lines = lines_of(prompt);
  switch (f) {
    case Formulation::Equations:
      return solve_equations(lines);
    case Formulation::LivesWith:
      return solve_lives_with(lines);
    case Formulation::Kingdoms:
      return solve_kingdoms(lines);
    case Formulation::Functions:
      return solve_functions(lines);
    case Formulation::Relatives:
      return solve_relatives(lines);
  }
  throw std::logic_error("unhandled formulation");
}

std::string solve_case(const PromptCase& c) { return solve_prompt(c.formulation, c.prompt); }

std::string grade_name(Grade g) {
  switch (g) {
    case Grade::Correct:
      return "correct";
    case Grade::AcceptableWrong:
      return "acceptable_wrong";
    case Grade::Unacceptable:
      return "unacceptable";
  }
  return "?";
}

std::string normalize_answer(const std::string& s) {
  const std::string punct = ".,!?;:";
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && (std::isspace(static_cast<unsigned char>(s[e - 1])) || punct.find(s[e - 1]) != std::string::npos)) {
    --e;
  }
  return lower(s.substr(b, e - b));
}

Grade grade(const PromptCase& c, const std::string& answer) {
  const std::string a = normalize_answer(answer);
  if (a == normalize_answer(c.correct)) return Grade::Correct;
  for (const auto& acc : c.acceptable) {
    if (a == normalize_answer(acc)) return Grade::AcceptableWrong;
  }
  return Grade::Unacceptable;
}

MockMode parse_mock_mode(const std::string& text) {
  if (text == "uniform") return MockMode::Uniform;
  if (text == "correct") return MockMode::Correct;
  if (text == "garbage") return MockMode::Garbage;
  throw std::invalid_argument("unknown mock mode '" + text + "' (expected uniform, correct or garbage)");
}

std::string MockClient::complete(const std::string& prompt, const CallContext& ctx) {
  (void)prompt;
  if (!ctx.pcase) throw TransportError("mock client needs the case");
  switch (mode_) {
    case MockMode::Correct:
      return ctx.pcase->correct;
    case MockMode::Garbage:
      return "banana";
    case MockMode::Uniform: {
      Rng rng(derive_seed(seed_, static_cast<uint64_t>(ctx.case_index), static_cast<uint64_t>(ctx.attempt)));
      const auto& acc = ctx.pcase->acceptable;
      return acc[static_cast<size_t>(pick(static_cast<int>(acc.size()), rng))];
    }
  }
  return {};
}

FormulationReport summarize(Formulation f, const std::vector<CaseRecord>& records) {
  FormulationReport r;
  r.formulation = f;
  r.n_cases = static_cast<int64_t>(records.size());
  int64_t correct = 0;
  int64_t attempts = 0;
  double baseline = 0.0;
  for (const auto& rec : records) {
    baseline += 1.0 / static_cast<double>(rec.pcase.acceptable.size());
    if (rec.skipped) {
      ++r.n_skipped;
      continue;
    }
    attempts += static_cast<int64_t>(rec.answers.size());
    if (rec.final_grade == Grade::Correct) ++correct;
  }
  const int64_t answered = r.n_cases - r.n_skipped;
  if (answered > 0) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(answered);
    r.mean_attempts = static_cast<double>(attempts) / static_cast<double>(answered);
  }
  if (r.n_cases > 0) r.random_baseline = baseline / static_cast<double>(r.n_cases);
  return r;
}

BenchResult run_benchmark(ChatClient& client, Formulation f, const RunOptions& options) {
  if (options.n_cases < 1) throw std::invalid_argument("n_cases must be >= 1");
  if (options.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (options.concurrency < 1) throw std::invalid_argument("concurrency must be >= 1");
  BenchResult result;
  result.records.resize(static_cast<size_t>(options.n_cases));
  const uint64_t stream = streams::kBench + static_cast<uint64_t>(f);
  for (int64_t i = 0; i < options.n_cases; ++i) {
    Rng rng(derive_seed(options.seed, stream, static_cast<uint64_t>(i)));
    CaseRecord& rec = result.records[static_cast<size_t>(i)];
    rec.index = i;
    rec.pcase = gen_prompt(f, options.steps, options.n_chains, rng);
  }

  std::atomic<int64_t> next{0};
  auto worker = [&] {
    for (int64_t i = next++; i < options.n_cases; i = next++) {
      CaseRecord& rec = result.records[static_cast<size_t>(i)];
      for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
        const CallContext ctx{i, attempt, &rec.pcase};
        std::string answer;
        bool ok = false;
        for (int retry = 0; retry <= options.transport_retries; ++retry) {
          try {
            answer = client.complete(rec.pcase.prompt, ctx);
            ok = true;
            break;
          } catch (const TransportError& e) {
            rec.error = e.what();
            if (retry < options.transport_retries) {
              std::this_thread::sleep_for(std::chrono::duration<double>(options.backoff_s * (1 << retry)));
            }
          }
        }
        if (!ok) {
          rec.skipped = true;
          break;
        }
        rec.error.clear();
        const Grade g = grade(rec.pcase, answer);
        rec.answers.push_back(answer);
        rec.grades.push_back(g);
        rec.final_grade = g;
        if (g != Grade::Unacceptable) break;
      }
    }
  };
  const int threads = static_cast<int>(std::min<int64_t>(options.concurrency, options.n_cases));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (int t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
  }
  result.report = summarize(f, result.records);
  return result;
}

void write_transcripts(const std::filesystem::path& path, const std::vector<CaseRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& rec : records) {
    json attempts = json::array();
    for (size_t i = 0; i < rec.answers.size(); ++i) {
      attempts.push_back({{"answer", rec.answers[i]}, {"grade", grade_name(rec.grades[i])}});
    }
    json line{{"case", rec.index},
              {"formulation", formulation_name(rec.pcase.formulation)},
              {"steps", rec.pcase.steps},
              {"n_chains", rec.pcase.n_chains},
              {"prompt", rec.pcase.prompt},
              {"correct", rec.pcase.correct},
              {"acceptable", rec.pcase.acceptable},
              {"attempts", std::move(attempts)},
              {"grade", rec.skipped ? "skipped" : grade_name(rec.final_grade)},
              {"skipped", rec.skipped}};
    if (!rec.error.empty()) line["error"] = rec.error;
    out << line.dump() << '\n';
  }
}

}  // namespace retlab::bench
