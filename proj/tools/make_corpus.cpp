// Writes a synthetic WAV corpus plus manifest for trying out the pipeline.
#include <iostream>

#include <CLI11.hpp>

#include "fluency/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic fluency corpus generator"};
  std::string out;
  std::string kind = "separable";
  int count = 60;
  int test_count = 0;
  std::uint64_t seed = 1;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--kind", kind, "separable or sweep")->check(CLI::IsMember({"separable", "sweep"}));
  app.add_option("--count", count, "utterances (training part for --test-count)")->check(CLI::PositiveNumber);
  app.add_option("--test-count", test_count, "extra held-out utterances marked split=test");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    auto utts = kind == "sweep" ? fluency::synth::sweep_corpus(count, seed) : fluency::synth::separable_corpus(count, seed);
    if (test_count > 0) {
      for (auto& u : utts) u.split = "train";
      auto test = fluency::synth::separable_corpus(test_count, seed + 1000, 2, 8, "test");
      for (auto& u : test) u.split = "test";
      utts.insert(utts.end(), test.begin(), test.end());
    }
    const auto manifest = fluency::synth::write_corpus(out, utts, seed);
    std::cerr << "wrote " << utts.size() << " utterances, manifest " << manifest.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
