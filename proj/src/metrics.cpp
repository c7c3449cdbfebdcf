#include "pmedit/harness.hpp"

#include "pmedit/error.hpp"

#include <unordered_map>
#include <unordered_set>

namespace pmedit {

bool MetricsReport::operator==(const MetricsReport& o) const {
  return es == o.es && ps == o.ps && ns == o.ns && s == o.s && edits_so_far == o.edits_so_far &&
         batch_index == o.batch_index && objective.preservation == o.objective.preservation &&
         objective.memorization == o.objective.memorization && objective.lambda == o.objective.lambda &&
         delta_fro == o.delta_fro;
}

double composite_score_percent(double es_pct, double ps_pct, double ns_pct) {
  if (es_pct <= 0.0 || ps_pct <= 0.0 || ns_pct <= 0.0) return 0.0;
  return 3.0 / (1.0 / es_pct + 1.0 / ps_pct + 1.0 / ns_pct);
}

double composite_score(double es, double ps, double ns) {
  return composite_score_percent(100.0 * es, 100.0 * ps, 100.0 * ns);
}

namespace {

// Strictly closer to the new target; equal distances fail.
bool prefers_new(const Vector& out, const Vector& t_new, const Vector& t_old) {
  return (out - t_new).squaredNorm() < (out - t_old).squaredNorm();
}

}  // namespace

MetricsReport eval_metrics(const ToyModel& edited, const FactSet& facts,
                           const std::vector<std::int64_t>& edited_ids, std::int64_t layer) {
  (void)layer;
  const std::int64_t n = static_cast<std::int64_t>(edited_ids.size());
  std::unordered_set<std::int64_t> edited_set;
  for (const auto id : edited_ids) {
    const SyntheticFact& f = facts.at(id);
    if (!f.editable) {
      throw Error(ErrorKind::UnknownFactId, "fact " + std::to_string(id) + " is not editable");
    }
    edited_set.insert(id);
  }

  struct PerFact {
    int es = 0;
    std::int64_t ps_hits = 0;
    std::int64_t ps_total = 0;
    std::int64_t ns_hits = 0;
    std::int64_t ns_total = 0;
  };
  std::vector<PerFact> per(n);
  parallel_for(n, [&](std::int64_t i) {
    const SyntheticFact& f = facts.at(edited_ids[i]);
    PerFact& r = per[i];
    r.es = prefers_new(forward(edited, f.x).output(), f.t_new, f.t_old) ? 1 : 0;
    for (const auto& p : f.paraphrases) {
      r.ps_hits += prefers_new(forward(edited, p).output(), f.t_new, f.t_old) ? 1 : 0;
      ++r.ps_total;
    }
    for (const auto nid : f.neighbor_ids) {
      if (edited_set.count(nid)) continue;
      const SyntheticFact& nb = facts.at(nid);
      const Vector out = forward(edited, nb.x).output();
      // Neighbor keeps its own answer rather than taking the edited fact's target.
      r.ns_hits += (out - nb.t_old).squaredNorm() < (out - f.t_new).squaredNorm() ? 1 : 0;
      ++r.ns_total;
    }
  });

  std::int64_t es = 0, ps_hits = 0, ps_total = 0, ns_hits = 0, ns_total = 0;
  for (const auto& r : per) {
    es += r.es;
    ps_hits += r.ps_hits;
    ps_total += r.ps_total;
    ns_hits += r.ns_hits;
    ns_total += r.ns_total;
  }
  MetricsReport report;
  report.es = n > 0 ? static_cast<double>(es) / n : 0.0;
  report.ps = ps_total > 0 ? static_cast<double>(ps_hits) / ps_total : 0.0;
  // No neighbor pairs: nothing was disturbed.
  report.ns = ns_total > 0 ? static_cast<double>(ns_hits) / ns_total : 1.0;
  report.s = composite_score(report.es, report.ps, report.ns);
  report.edits_so_far = n;
  return report;
}

MetricsReport aggregate(const std::vector<MetricsReport>& reports) {
  MetricsReport out;
  if (reports.empty()) return out;
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    out.es += r.es;
    out.ps += r.ps;
    out.ns += r.ns;
    out.objective.preservation += r.objective.preservation;
    out.objective.memorization += r.objective.memorization;
    out.delta_fro += r.delta_fro;
  }
  out.es /= n;
  out.ps /= n;
  out.ns /= n;
  out.objective.preservation /= n;
  out.objective.memorization /= n;
  out.objective.lambda = reports.front().objective.lambda;
  out.delta_fro /= n;
  out.s = composite_score(out.es, out.ps, out.ns);
  out.edits_so_far = static_cast<std::int64_t>(reports.size());
  out.batch_index = 0;
  return out;
}

}  // namespace pmedit
