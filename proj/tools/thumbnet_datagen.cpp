#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "thumbnet/dataio/synth.hpp"

namespace tn = thumbnet;

int main(int argc, char** argv) {
  CLI::App app{"Generate the procedural ten-class benchmark in CIFAR-10 binary layout"};
  tn::SynthOptions opts;
  std::string out;
  app.add_option("--out", out, "target directory")->required();
  app.add_option("--train-per-class", opts.train_per_class, "train images per class");
  app.add_option("--test-per-class", opts.test_per_class, "test images per class");
  app.add_option("--label-noise", opts.label_noise, "wrong-label fraction in the train split");
  app.add_option("--seed", opts.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    tn::write_synth_cifar_dir(out, opts);
    std::cout << "wrote " << opts.train_per_class * 10 << " train and "
              << opts.test_per_class * 10 << " test images to " << out << "\n";
    return 0;
  } catch (const tn::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
