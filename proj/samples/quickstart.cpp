// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Short LBF training run with the foraging rules, then an alignment check.
//   quickstart [rules-file]

#include <iostream>

#include "kgmarl/trainer.hpp"

int main(int argc, char** argv) {
  using namespace kgmarl;
  TrainConfig cfg;
  cfg.env = "lbf";
  cfg.total_steps = 5000;
  cfg.test_interval = 1000;
  cfg.test_episodes = 8;
  cfg.epsilon_anneal = 2500;
  cfg.rules = argc > 1 ? argv[1] : KGMARL_SOURCE_DIR "/configs/lbf_forage.rules";

  Trainer trainer(cfg);
  const TrainResult r = trainer.run();
  for (const auto& m : r.metrics) std::cout << m.dump() << '\n';

  const AlignmentStats a =
      alignment_stats(trainer.env(), trainer.net(), r.params, trainer.knowledge().rules(), 20, cfg.seed);
  std::cout << "avg_steps " << a.avg_steps << " consistency " << a.consistency_fraction.value_or(-1.0) << '\n';
}
