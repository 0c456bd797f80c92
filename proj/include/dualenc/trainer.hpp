#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dualenc/config.hpp"
#include "dualenc/model.hpp"
#include "dualenc/optimizer.hpp"
#include "dualenc/schedule.hpp"
#include "dualenc/text_data.hpp"

namespace dualenc {

// Mean batch loss over the stream; Train mode runs one Adam update per batch,
// Validate mutates nothing (batchnorm keeps using batch statistics). Batches
// without two distinct videos carry no ranking signal and are skipped.
double run_epoch(DualModel& model, const std::vector<MiniBatch>& batches, Mode mode, Adam* optimizer,
                 double margin);

struct EpochRecord {
  int epoch;
  double train_loss;
  double val_loss;
  double lr;
  std::string action;
};

struct TrainResult {
  TrainState state;
  std::vector<EpochRecord> records;
};

// The full optimization loop: deterministic per-epoch reshuffling, validation
// after every epoch, halve-on-plateau learning rate, early stopping, and a
// checkpoint written on each validation improvement. When `validation` is
// null the training pairs double as the validation set (in fixed order).
// `log`, when given, receives one structured JSON record per epoch.
TrainResult train_model(DualModel& model, const Corpus& train, const Corpus* validation,
                        const TrainConfig& cfg, std::uint64_t vocab_hash,
                        const std::string& checkpoint_path, std::ostream* log = nullptr);

}  // namespace dualenc
