#pragma once

#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dualenc {

// Items of one query ordered by descending similarity; equal scores break
// toward the ascending item id so rankings are deterministic.
struct RankedList {
  std::string query_id;
  std::vector<std::string> items;
  std::vector<char> relevant;
};

RankedList make_ranked_list(std::string query_id,
                            std::vector<std::pair<std::string, double>> scored,
                            const std::unordered_set<std::string>& relevant_ids);

struct MetricReport {
  std::vector<std::pair<int, double>> recall_at;  // (K, percentage in [0, 100])
  double median_rank = 0.0;                       // Med r over first-relevant ranks
  double mean_ap = 0.0;

  double recall(int k) const;
  double recall_sum() const;
};

// R@K = percentage of queries whose first relevant item ranks within the top
// K; Med r = median of first-relevant ranks (middle two averaged for even
// counts); mAP = mean of standard average precision over all relevant items.
// Ranks are 1-based. A query without a relevant item is an error.
MetricReport compute_metrics(const std::vector<RankedList>& lists,
                             const std::vector<int>& ks = {1, 5, 10});

}  // namespace dualenc
