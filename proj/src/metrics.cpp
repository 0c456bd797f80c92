#include "dualenc/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace dualenc {

RankedList make_ranked_list(std::string query_id,
                            std::vector<std::pair<std::string, double>> scored,
                            const std::unordered_set<std::string>& relevant_ids) {
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  RankedList list;
  list.query_id = std::move(query_id);
  list.items.reserve(scored.size());
  list.relevant.reserve(scored.size());
  for (auto& [id, score] : scored) {
    (void)score;
    list.relevant.push_back(relevant_ids.count(id) ? 1 : 0);
    list.items.push_back(std::move(id));
  }
  return list;
}

double MetricReport::recall(int k) const {
  for (const auto& [kk, v] : recall_at)
    if (kk == k) return v;
  throw std::out_of_range("no R@" + std::to_string(k) + " in report");
}

double MetricReport::recall_sum() const {
  double s = 0.0;
  for (const auto& [k, v] : recall_at) s += v;
  return s;
}

MetricReport compute_metrics(const std::vector<RankedList>& lists, const std::vector<int>& ks) {
  if (lists.empty()) throw std::invalid_argument("compute_metrics: no queries");
  std::vector<double> first_ranks;
  first_ranks.reserve(lists.size());
  double ap_total = 0.0;
  for (const auto& list : lists) {
    if (list.items.empty() || list.items.size() != list.relevant.size())
      throw std::invalid_argument("compute_metrics: malformed ranked list for query '" +
                                  list.query_id + "'");
    std::int64_t first = 0, hits = 0;
    double ap = 0.0;
    for (std::size_t pos = 0; pos < list.items.size(); ++pos) {
      if (!list.relevant[pos]) continue;
      ++hits;
      const double rank = static_cast<double>(pos + 1);
      if (hits == 1) first = static_cast<std::int64_t>(rank);
      ap += static_cast<double>(hits) / rank;  // precision at this hit
    }
    if (hits == 0)
      throw std::invalid_argument("compute_metrics: query '" + list.query_id +
                                  "' has no relevant item");
    first_ranks.push_back(static_cast<double>(first));
    ap_total += ap / static_cast<double>(hits);
  }

  MetricReport report;
  const double n = static_cast<double>(lists.size());
  for (int k : ks) {
    std::int64_t within = 0;
    for (double r : first_ranks)
      if (r <= k) ++within;
    report.recall_at.emplace_back(k, 100.0 * static_cast<double>(within) / n);
  }
  std::sort(first_ranks.begin(), first_ranks.end());
  const std::size_t m = first_ranks.size();
  report.median_rank = (m % 2 == 1) ? first_ranks[m / 2]
                                    : 0.5 * (first_ranks[m / 2 - 1] + first_ranks[m / 2]);
  report.mean_ap = ap_total / n;
  return report;
}

}  // namespace dualenc
