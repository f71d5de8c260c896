#pragma once

#include <string>
#include <utility>
#include <vector>

namespace taxlink {

class Taxonomy;

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Exact-match span identity for micro-averaged scoring.
struct SpanRecord {
  std::string doc_id;
  int start = 0;
  int end = 0;
  auto operator<=>(const SpanRecord&) const = default;
};

// Micro precision/recall/F1 over exact (doc_id, start, end) matches.
// Precision is 0 by convention when there are no predictions.
Prf span_micro_prf(const std::vector<SpanRecord>& gold, const std::vector<SpanRecord>& pred);

// Mean reciprocal rank; ranks are 1-based.
double mrr(const std::vector<int>& ranks);

// Fraction of gold ranks <= k.
double precision_at_k(const std::vector<int>& ranks, int k);

// Taxonomy-aware breakdown of wrong top-1 predictions.
struct ConfusionReport {
  int parent = 0;     // predicted the gold node's parent
  int child = 0;      // predicted one of its children
  int sibling = 0;    // shares a parent with the gold node
  int ancestry = 0;   // deeper ancestor or descendant
  int unrelated = 0;
  int wrong_total = 0;
  int correct = 0;
};

// Pairs are (gold node index, predicted node index).
ConfusionReport confusion_report(const std::vector<std::pair<int, int>>& gold_and_predicted,
                                 const Taxonomy& tax);

// Mean and standard deviation per metric over independent runs. The standard
// deviation uses the population convention (n in the denominator), so a
// single run reports exactly 0.
struct EvalReport {
  struct Stat {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_run;
  };
  std::string task;
  std::vector<std::pair<std::string, Stat>> metrics;  // insertion-ordered

  const Stat* find(const std::string& name) const;
};

EvalReport aggregate_runs(const std::string& task,
                          const std::vector<std::pair<std::string, std::vector<double>>>& runs);

// Aligned human-readable table and flat key-value form (deterministic bytes).
std::string format_report_table(const EvalReport& report);
std::string format_report_kv(const EvalReport& report);

}  // namespace taxlink
