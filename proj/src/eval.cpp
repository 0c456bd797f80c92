#include "dualenc/eval.hpp"

#include <unordered_map>

#include "dualenc/vecmath.hpp"

namespace dualenc {

BidirectionalReport evaluate_bidirectional(const DualModel& model,
                                           const std::vector<VideoItem>& videos,
                                           const std::vector<CaptionItem>& captions,
                                           const std::vector<int>& ks) {
  if (videos.empty() || captions.empty())
    throw std::invalid_argument("evaluate: need at least one video and one caption");
  std::unordered_map<std::string, std::size_t> video_slot;
  for (std::size_t i = 0; i < videos.size(); ++i)
    if (!video_slot.emplace(videos[i].video_id, i).second)
      throw std::invalid_argument("evaluate: duplicate video id '" + videos[i].video_id + "'");
  for (const auto& c : captions)
    if (!video_slot.count(c.video_id))
      throw std::invalid_argument("evaluate: caption '" + c.caption_id +
                                  "' references missing video '" + c.video_id + "'");

  const std::int64_t dim = model.config().common_dim;
  std::vector<std::vector<float>> fv(videos.size()), fs(captions.size());
  for (std::size_t i = 0; i < videos.size(); ++i) {
    fv[i] = model.encode_video(videos[i]);
    l2_normalize_inplace(fv[i]);
  }
  for (std::size_t i = 0; i < captions.size(); ++i) {
    fs[i] = model.encode_sentence(captions[i]);
    l2_normalize_inplace(fs[i]);
  }

  BidirectionalReport report;
  {
    std::vector<RankedList> lists;
    lists.reserve(captions.size());
    for (std::size_t c = 0; c < captions.size(); ++c) {
      std::vector<std::pair<std::string, double>> scored;
      scored.reserve(videos.size());
      for (std::size_t v = 0; v < videos.size(); ++v)
        scored.emplace_back(videos[v].video_id, dot(fs[c].data(), fv[v].data(), dim));
      lists.push_back(make_ranked_list(captions[c].caption_id, std::move(scored),
                                       {captions[c].video_id}));
    }
    report.text_to_video = compute_metrics(lists, ks);
  }
  {
    std::unordered_map<std::string, std::unordered_set<std::string>> captions_of;
    for (const auto& c : captions) captions_of[c.video_id].insert(c.caption_id);
    std::vector<RankedList> lists;
    lists.reserve(videos.size());
    for (std::size_t v = 0; v < videos.size(); ++v) {
      std::vector<std::pair<std::string, double>> scored;
      scored.reserve(captions.size());
      for (std::size_t c = 0; c < captions.size(); ++c)
        scored.emplace_back(captions[c].caption_id, dot(fv[v].data(), fs[c].data(), dim));
      lists.push_back(make_ranked_list(videos[v].video_id, std::move(scored),
                                       captions_of[videos[v].video_id]));
    }
    report.video_to_text = compute_metrics(lists, ks);
  }
  report.sum_of_recalls = report.text_to_video.recall_sum() + report.video_to_text.recall_sum();
  return report;
}

}  // namespace dualenc
