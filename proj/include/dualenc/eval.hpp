#pragma once

#include "dualenc/metrics.hpp"
#include "dualenc/model.hpp"
#include "dualenc/text_data.hpp"

namespace dualenc {

struct BidirectionalReport {
  MetricReport text_to_video;  // each caption queries the videos, one relevant
  MetricReport video_to_text;  // each video queries the captions, all its captions relevant
  double sum_of_recalls = 0.0;
};

// Eval-mode encodings on both sides, cosine similarities, rank-based metrics
// in both retrieval directions plus the sum of all recalls.
BidirectionalReport evaluate_bidirectional(const DualModel& model,
                                           const std::vector<VideoItem>& videos,
                                           const std::vector<CaptionItem>& captions,
                                           const std::vector<int>& ks = {1, 5, 10});

}  // namespace dualenc
