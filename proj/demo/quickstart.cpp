// Synthesize sinusoidal motion, train briefly, compare with the zero-velocity
// baseline on held-out clips.
//
//   ./build/demo/quickstart [iterations]

#include <cstdio>
#include <cstdlib>

#include "haarmodic/data.hpp"
#include "haarmodic/training.hpp"

using namespace haarmodic;

int main(int argc, char** argv) {
  const int iterations = argc > 1 ? std::atoi(argv[1]) : 400;

  SynthConfig sc;
  sc.clips = 32;
  sc.seed = 1;
  const auto train_clips = synth_generate(sc);
  sc.clips = 16;
  sc.seed = 2;
  const auto test_clips = synth_generate(sc);

  TrainConfig tc;
  tc.iterations = iterations;
  tc.batch_size = 16;
  tc.log_every = 100;
  tc.checkpoint_every = 0;
  // Short run: take larger steps than the 3e-4 default.
  tc.schedule.base_lr = 1e-3;

  std::printf("training %d iterations on %zu clips\n", iterations, train_clips.size());
  const auto res = train<float>(train_clips, tc, {}, [](const MetricRow& r) {
    std::printf("  it %5lld  l_re %8.3f  l_v %7.3f\n", r.iteration, r.loss.l_re, r.loss.l_v);
  });

  const EvalReport net = evaluate(network_predictor(res.net), test_clips, 32, 3, "network");
  const EvalReport base = evaluate(baseline_predictor(), test_clips, 32, 3, "baseline");
  std::printf("\nMPJPE (mm) on %zu held-out windows\n%-10s", net.samples, "horizon");
  for (int ms : eval_horizons_ms()) std::printf("%8dms", ms);
  std::printf("\n%-10s", "network");
  for (double v : net.overall) std::printf("%10.2f", v);
  std::printf("\n%-10s", "baseline");
  for (double v : base.overall) std::printf("%10.2f", v);
  std::printf("\n");
}
