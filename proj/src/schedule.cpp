#include "dualenc/schedule.hpp"

namespace dualenc {

const char* to_string(ScheduleAction a) {
  switch (a) {
    case ScheduleAction::Continue: return "continue";
    case ScheduleAction::HalveLr: return "halve_lr";
    case ScheduleAction::Stop: return "stop";
  }
  return "?";
}

ScheduleAction schedule_update(TrainState& state, double val_loss, int max_epochs,
                               int plateau_epochs, int early_stop_epochs) {
  ++state.epoch;
  if (val_loss < state.best_val_loss) {
    state.best_val_loss = val_loss;
    state.epochs_since_best = 0;
    state.lr_plateau = 0;
  } else {
    ++state.epochs_since_best;
    ++state.lr_plateau;
  }
  if (state.epochs_since_best >= early_stop_epochs || state.epoch >= max_epochs)
    return ScheduleAction::Stop;
  if (state.lr_plateau >= plateau_epochs) {
    state.lr /= 2.0;
    state.lr_plateau = 0;
    return ScheduleAction::HalveLr;
  }
  return ScheduleAction::Continue;
}

}  // namespace dualenc
