// Copyright 2026 The drgrade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// drgrade-synth: writes a synthetic fundus corpus with train.csv and holdout.csv.

#include <iostream>

#include "CLI11.hpp"
#include "drgrade/synthetic.hpp"
#include "json.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic fundus corpus generator"};
  std::string out;
  std::size_t count = 1000, holdout = 200;
  std::uint64_t seed = 42;
  int size = 128;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--count", count, "Total images");
  app.add_option("--holdout", holdout, "Images in the held-out split");
  app.add_option("--seed", seed, "Corpus seed");
  app.add_option("--size", size, "Image side in pixels")->check(CLI::Range(32, 1024));
  CLI11_PARSE(app, argc, argv);
  try {
    const auto corpus = drgrade::write_synthetic_corpus(out, count, holdout, seed, size);
    std::cout << nlohmann::json{{"event", "synthetic_corpus"},
                                {"train", corpus.train.size()},
                                {"holdout", corpus.holdout.size()},
                                {"dir", out}}
                     .dump()
              << std::endl;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"code", "synth_failed"}, {"message", e.what()}}}}.dump()
              << std::endl;
    return 2;
  }
  return 0;
}
