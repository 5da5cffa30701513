// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Natural-language retrieval prompts for chat models: generators for five
// formulations, a reference solver that re-parses the prompt text, a grader,
// and a resampling benchmark runner over pluggable chat clients.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "retlab/rng.hpp"

namespace retlab::bench {

enum class Formulation : uint8_t { Equations, LivesWith, Kingdoms, Functions, Relatives };

std::string formulation_name(Formulation f);
Formulation parse_formulation(const std::string& text);
inline constexpr Formulation kAllFormulations[] = {Formulation::Equations, Formulation::LivesWith,
                                                   Formulation::Kingdoms, Formulation::Functions,
                                                   Formulation::Relatives};

class PoolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PromptCase {
  Formulation formulation = Formulation::Equations;
  int steps = 0;
  int n_chains = 0;
  std::string prompt;
  std::string correct;
  std::vector<std::string> acceptable;  // sorted
};

/// Word pools shipped in data/pools.json.
const nlohmann::json& pools();

/// Kingdoms always has five tiers, Functions and Relatives have no chain depth,
/// and Relatives has a fixed 4 x 4 family shape: `steps` is ignored for those
/// three and `n_chains` for Relatives.
PromptCase gen_prompt(Formulation f, int steps, int n_chains, Rng& rng);

/// Follows the chain in the prompt text. Throws SolveError when it cannot.
std::string solve_case(const PromptCase& c);
std::string solve_prompt(Formulation f, const std::string& prompt);

enum class Grade : uint8_t { Correct, AcceptableWrong, Unacceptable };
std::string grade_name(Grade g);

/// Trim, case-fold, strip trailing punctuation.
std::string normalize_answer(const std::string& s);
Grade grade(const PromptCase& c, const std::string& answer);

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CallContext {
  int64_t case_index = 0;
  int attempt = 0;
  const PromptCase* pcase = nullptr;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// One user message in, the model's reply out. Throws TransportError.
  virtual std::string complete(const std::string& prompt, const CallContext& ctx) = 0;
};

enum class MockMode : uint8_t { Uniform, Correct, Garbage };
MockMode parse_mock_mode(const std::string& text);

/// Offline client. Uniform answers are drawn from the acceptable set with a
/// seed derived from (seed, case, attempt), so results do not depend on
/// scheduling.
class MockClient : public ChatClient {
 public:
  MockClient(MockMode mode, uint64_t seed) : mode_(mode), seed_(seed) {}
  std::string complete(const std::string& prompt, const CallContext& ctx) override;

 private:
  MockMode mode_;
  uint64_t seed_;
};

struct ProviderConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string token_env = "OPENAI_API_KEY";
  int max_attempts = 8;
  double timeout_s = 60.0;
  /// Extra request fields passed through unchanged (temperature, ...).
  nlohmann::json options = nlohmann::json::object();

  void validate() const;
};

/// Chat-completions style JSON over HTTP(S).
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(ProviderConfig config);
  std::string complete(const std::string& prompt, const CallContext& ctx) override;

 private:
  ProviderConfig config_;
  std::string token_;
};

struct CaseRecord {
  int64_t index = 0;
  PromptCase pcase;
  std::vector<std::string> answers;
  std::vector<Grade> grades;
  Grade final_grade = Grade::Unacceptable;
  bool skipped = false;
  std::string error;
};

struct FormulationReport {
  Formulation formulation = Formulation::Equations;
  int64_t n_cases = 0;
  int64_t n_skipped = 0;
  double accuracy = 0.0;
  double mean_attempts = 0.0;
  double random_baseline = 0.0;
};

struct RunOptions {
  int steps = 5;
  int n_chains = 4;
  int64_t n_cases = 500;
  int max_attempts = 8;
  int concurrency = 4;
  uint64_t seed = 0;
  int transport_retries = 3;
  double backoff_s = 1.0;
};

struct BenchResult {
  FormulationReport report;
  std::vector<CaseRecord> records;  // in case order
};

/// Generates and queries `n_cases` cases, resampling until an acceptable answer
/// or `max_attempts`.
BenchResult run_benchmark(ChatClient& client, Formulation f, const RunOptions& options);

/// Deterministic reduction over recorded cases.
FormulationReport summarize(Formulation f, const std::vector<CaseRecord>& records);

void write_transcripts(const std::filesystem::path& path, const std::vector<CaseRecord>& records);

}  // namespace retlab::bench
