#include "taxlink/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "taxlink/errors.hpp"
#include "taxlink/taxonomy.hpp"

namespace taxlink {

Prf span_micro_prf(const std::vector<SpanRecord>& gold, const std::vector<SpanRecord>& pred) {
  const std::set<SpanRecord> gold_set(gold.begin(), gold.end());
  const std::set<SpanRecord> pred_set(pred.begin(), pred.end());
  int tp = 0;
  for (const SpanRecord& p : pred_set) tp += gold_set.count(p) ? 1 : 0;
  Prf out;
  out.precision = pred_set.empty() ? 0.0 : static_cast<double>(tp) / pred_set.size();
  out.recall = gold_set.empty() ? 0.0 : static_cast<double>(tp) / gold_set.size();
  out.f1 = out.precision + out.recall == 0.0
               ? 0.0
               : 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

double mrr(const std::vector<int>& ranks) {
  if (ranks.empty()) throw std::domain_error("mrr: empty rank list");
  double sum = 0.0;
  for (int r : ranks) {
    if (r < 1) throw std::domain_error("mrr: ranks are 1-based");
    sum += 1.0 / static_cast<double>(r);
  }
  return sum / static_cast<double>(ranks.size());
}

double precision_at_k(const std::vector<int>& ranks, int k) {
  if (k < 1) throw std::domain_error("precision_at_k: k must be >= 1");
  if (ranks.empty()) return 0.0;
  int hits = 0;
  for (int r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

namespace {

// All ancestors of a node through the tree-number parent relation.
std::set<int> ancestors_of(const Taxonomy& tax, int node) {
  std::set<int> out;
  std::vector<int> frontier{node};
  while (!frontier.empty()) {
    const int cur = frontier.back();
    frontier.pop_back();
    for (int p : tax.parents(cur)) {
      if (out.insert(p).second) frontier.push_back(p);
    }
  }
  return out;
}

}  // namespace

ConfusionReport confusion_report(const std::vector<std::pair<int, int>>& gold_and_predicted,
                                 const Taxonomy& tax) {
  ConfusionReport report;
  for (const auto& [gold, pred] : gold_and_predicted) {
    if (gold == pred) {
      ++report.correct;
      continue;
    }
    ++report.wrong_total;
    const auto& gold_parents = tax.parents(gold);
    const auto& pred_parents = tax.parents(pred);
    if (std::binary_search(gold_parents.begin(), gold_parents.end(), pred)) {
      ++report.parent;
      continue;
    }
    if (std::binary_search(pred_parents.begin(), pred_parents.end(), gold)) {
      ++report.child;
      continue;
    }
    bool shares_parent = false;
    for (int p : gold_parents) {
      if (std::binary_search(pred_parents.begin(), pred_parents.end(), p)) {
        shares_parent = true;
        break;
      }
    }
    if (shares_parent) {
      ++report.sibling;
      continue;
    }
    const std::set<int> gold_anc = ancestors_of(tax, gold);
    const std::set<int> pred_anc = ancestors_of(tax, pred);
    if (gold_anc.count(pred) || pred_anc.count(gold)) {
      ++report.ancestry;
    } else {
      ++report.unrelated;
    }
  }
  return report;
}

const EvalReport::Stat* EvalReport::find(const std::string& name) const {
  for (const auto& [key, stat] : metrics) {
    if (key == name) return &stat;
  }
  return nullptr;
}

EvalReport aggregate_runs(const std::string& task,
                          const std::vector<std::pair<std::string, std::vector<double>>>& runs) {
  EvalReport report;
  report.task = task;
  for (const auto& [name, values] : runs) {
    if (values.empty()) throw std::domain_error("aggregate_runs: no values for " + name);
    EvalReport::Stat stat;
    stat.per_run = values;
    double sum = 0.0;
    for (double v : values) sum += v;
    stat.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - stat.mean) * (v - stat.mean);
    stat.stddev = std::sqrt(sq / static_cast<double>(values.size()));
    report.metrics.emplace_back(name, std::move(stat));
  }
  return report;
}

std::string format_report_table(const EvalReport& report) {
  std::size_t width = 6;
  for (const auto& [name, stat] : report.metrics) width = std::max(width, name.size());
  std::ostringstream out;
  out << "task: " << report.task << "\n";
  char buf[96];
  for (const auto& [name, stat] : report.metrics) {
    std::snprintf(buf, sizeof(buf), "%-*s  %8.4f +- %.4f  (n=%zu)\n", static_cast<int>(width),
                  name.c_str(), stat.mean, stat.stddev, stat.per_run.size());
    out << buf;
  }
  return out.str();
}

std::string format_report_kv(const EvalReport& report) {
  std::ostringstream out;
  out << "task = " << report.task << "\n";
  char buf[64];
  for (const auto& [name, stat] : report.metrics) {
    std::snprintf(buf, sizeof(buf), "%.17g", stat.mean);
    out << name << " = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", stat.stddev);
    out << name << ".std = " << buf << "\n";
    out << name << ".n_runs = " << stat.per_run.size() << "\n";
  }
  return out.str();
}

}  // namespace taxlink
