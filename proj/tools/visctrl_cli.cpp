#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "visctrl/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"visctrl: reference-guided subject editing with self-attention control"};
  app.require_subcommand(1);

  visctrl::cli::Options opt;
  const std::string help[] = {
      "write seeded denoiser weights",
      "edit one target image against one reference",
      "edit numbered frames with 1-3 references",
      "run a grid of edits or reconstructions",
      "invert and reconstruct one image",
  };
  std::size_t h = 0;
  for (const auto& name : visctrl::cli::commands()) {
    auto* sub = app.add_subcommand(name, help[h++]);
    sub->add_option("--config", opt.config, "key=value run configuration")->required();
    sub->add_option("--out", opt.out, "output directory")->required();
    sub->add_option("--jobs", opt.jobs, "concurrent frames (edit-seq)")->check(CLI::PositiveNumber);
    sub->add_flag("--dump-latents", opt.dump_latents, "write per-iteration latents as VTSR");
    sub->add_flag("--dump-attn", opt.dump_attn, "write self-attention maps");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error code=USAGE message=\"" << visctrl::cli::single_line(e.what()) << "\"\n";
    return 64;
  }
  return visctrl::cli::run(app.get_subcommands().front()->get_name(), opt, std::cout, std::cerr);
}
