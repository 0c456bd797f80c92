#pragma once

#include <limits>
#include <string>

namespace dualenc {

enum class ScheduleAction { Continue, HalveLr, Stop };

const char* to_string(ScheduleAction a);

struct TrainState {
  int epoch = 0;  // epochs completed
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;  // early-stop counter
  int lr_plateau = 0;         // non-decreasing-epochs counter, reset on halving
  double lr = 1e-4;
};

// Called once per epoch with that epoch's validation loss. The learning rate
// halves once the loss has not set a new best for `plateau_epochs` epochs in
// a row (the counter then resets); training stops after `early_stop_epochs`
// epochs without improvement or at `max_epochs`.
ScheduleAction schedule_update(TrainState& state, double val_loss, int max_epochs = 50,
                               int plateau_epochs = 3, int early_stop_epochs = 10);

}  // namespace dualenc
