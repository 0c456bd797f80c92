#include "dualenc/trainer.hpp"

#include <ostream>

#include "dualenc/checkpoint.hpp"
#include "json.hpp"

namespace dualenc {

double run_epoch(DualModel& model, const std::vector<MiniBatch>& batches, Mode mode, Adam* optimizer,
                 double margin) {
  if (batches.empty()) throw std::invalid_argument("run_epoch: empty batch stream");
  if (mode == Mode::Train && !optimizer)
    throw std::invalid_argument("run_epoch: training needs an optimizer");
  double total = 0.0;
  std::int64_t used = 0;
  for (const auto& batch : batches) {
    if (batch.distinct_groups < 2) continue;  // no negative exists for any pair
    ad::Tape tape;
    auto graph = model.batch_loss_graph(tape, batch, static_cast<float>(margin), mode);
    total += static_cast<double>(graph.loss.scalar());
    if (mode == Mode::Train) {
      model.params().zero_grads();
      tape.backward(graph.loss);
      optimizer->step();
    }
    ++used;
  }
  if (used == 0)
    throw std::runtime_error("run_epoch: no batch held two distinct videos; cannot form negatives");
  return total / static_cast<double>(used);
}

TrainResult train_model(DualModel& model, const Corpus& train, const Corpus* validation,
                        const TrainConfig& cfg, std::uint64_t vocab_hash,
                        const std::string& checkpoint_path, std::ostream* log) {
  cfg.validate();
  BatchStream train_stream(train, cfg.batch_size, cfg.seed, /*shuffle=*/true);
  const Corpus& val = validation ? *validation : train;
  BatchStream val_stream(val, cfg.batch_size, cfg.seed, /*shuffle=*/false);
  const auto val_batches = val_stream.epoch(0);

  Adam optimizer(model.params(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  TrainState state;
  state.lr = cfg.learning_rate;

  TrainResult result;
  for (int epoch = 1;; ++epoch) {
    const double train_loss = run_epoch(model, train_stream.epoch(epoch), Mode::Train, &optimizer, cfg.margin);
    const double val_loss = run_epoch(model, val_batches, Mode::Validate, nullptr, cfg.margin);
    const ScheduleAction action = schedule_update(state, val_loss, cfg.max_epochs,
                                                  cfg.lr_plateau_epochs, cfg.early_stop_epochs);
    optimizer.set_learning_rate(state.lr);
    if (state.epochs_since_best == 0 && !checkpoint_path.empty())
      save_checkpoint(model, vocab_hash, state, checkpoint_path);

    result.records.push_back({epoch, train_loss, val_loss, state.lr, to_string(action)});
    if (log) {
      *log << nlohmann::json{{"epoch", epoch},
                             {"train_loss", train_loss},
                             {"val_loss", val_loss},
                             {"lr", state.lr},
                             {"action", to_string(action)}}
                  .dump()
           << '\n';
    }
    if (action == ScheduleAction::Stop) break;
  }
  result.state = state;
  return result;
}

}  // namespace dualenc
