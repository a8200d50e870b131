// Generates a micro dataset and trains a small multi-task model on it,
// end to end in well under a minute. The point is a readable walkthrough
// of the full pipeline, not a useful model.
//
//   train_tiny [output_dir]

#include <iostream>

#include "bapn/train.hpp"

using namespace bapn;

int main(int argc, char** argv) {
  std::string out = argc > 1 ? argv[1] : "tiny_out";

  Config cfg;
  cfg.set("data.root", out + "/data");
  cfg.set("data.scenes", "16");
  cfg.set("data.duration", "0.25");
  cfg.set("data.grid_h", "8");
  cfg.set("data.grid_w", "16");
  cfg.set("model.base_channels", "4");
  cfg.set("model.aspp_filters", "8");
  cfg.set("model.fuse_channels", "8");
  cfg.set("model.dec_hidden", "4");
  cfg.set("model.s3r_widths", "4,4,4,4,4");
  cfg.set("train.tasks", "semantic,depth,s3r");
  cfg.set("train.epochs", "3");
  cfg.set("train.lr", "0.001");

  SplitCounts counts = generate_dataset(cfg);
  std::cout << "dataset: " << counts.train << " train / " << counts.val << " val / "
            << counts.test << " test\n\n";

  RunRecord rec = train(cfg, out + "/run", &std::cout);

  std::cout << "\n" << rec.steps << " steps in " << rec.wall_time_s << " s\n\n";
  std::cout << format_table(rec.final_reports.semantic, native_class_table()) << "\n";
  std::cout << format_table(rec.final_reports.depth) << "\n";
  std::cout << format_table(rec.final_reports.s3r) << "\n";
  std::cout << "artifacts under " << out << "/run\n";
  return 0;
}
