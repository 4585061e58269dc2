#include <CLI11.hpp>

#include "hv/experiment.hpp"

// hv: train and evaluate heterogeneous-pair face verifiers on synthetic data.
//
// Pipeline: gen-data -> pretrain -> finetune -> crossval / eval. Every
// command is deterministic given its config file; seeds live in the config.
int main(int argc, char** argv) {
    CLI::App app{"heterogeneous-pair verification trainer and evaluator"};
    app.require_subcommand(1);

    hv::cli::GenDataArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "generate synthetic datasets");
    gen->add_option("--config", gen_args.config, "experiment config (JSON)")->required();
    gen->add_option("--out-dir", gen_args.out_dir,
                    "output directory (default: config out_dir)");

    hv::cli::PretrainArgs pre_args;
    auto* pre = app.add_subcommand("pretrain", "train the base model on a labeled dataset");
    pre->add_option("--config", pre_args.config, "experiment config (JSON)")->required();
    pre->add_option("--data", pre_args.data, "labeled dataset (.hvdata)")->required();
    pre->add_option("--out-dir", pre_args.out_dir,
                    "output directory (default: config out_dir)");

    hv::cli::FinetuneArgs fin_args;
    auto* fin = app.add_subcommand("finetune", "fine-tune sibling networks on pairs");
    fin->add_option("--config", fin_args.config, "experiment config (JSON)")->required();
    fin->add_option("--data", fin_args.data, "pair dataset (.hvdata)")->required();
    fin->add_option("--out-dir", fin_args.out_dir,
                    "output directory (default: config out_dir)");
    fin->add_option("--base", fin_args.base, "base model checkpoint (.hvckpt)");
    fin->add_flag("--from-scratch", fin_args.from_scratch,
                  "initialize from the config model instead of a checkpoint");
    fin->add_option("--loss", fin_args.loss, "mps | am_softmax | l2_softmax");
    fin->add_flag("--shared", fin_args.shared, "one shared network instead of siblings");
    fin->add_option("--train-size", fin_args.train_size,
                    "train on a seeded random subset of this many subjects");

    hv::cli::CrossvalArgs cv_args;
    auto* cv = app.add_subcommand("crossval", "k-fold cross-validated fine-tune + eval");
    cv->add_option("--config", cv_args.config, "experiment config (JSON)")->required();
    cv->add_option("--data", cv_args.data, "pair dataset (.hvdata)")->required();
    cv->add_option("--out-dir", cv_args.out_dir,
                   "output directory (default: config out_dir)");
    cv->add_option("--base", cv_args.base, "base model checkpoint (.hvckpt)");
    cv->add_flag("--from-scratch", cv_args.from_scratch,
                 "initialize from the config model instead of a checkpoint");
    cv->add_option("--loss", cv_args.loss, "mps | am_softmax | l2_softmax");
    cv->add_flag("--shared", cv_args.shared, "one shared network instead of siblings");
    cv->add_option("--train-size", cv_args.train_size,
                   "per-fold seeded random subset of the training split");
    cv->add_option("--steps", cv_args.steps,
                   "override train.total_steps (0 evaluates the base model)");

    hv::cli::EvalArgs ev_args;
    auto* ev = app.add_subcommand("eval", "evaluate checkpoints on a pair dataset");
    ev->add_option("--config", ev_args.config, "experiment config (JSON)")->required();
    ev->add_option("--data", ev_args.data, "pair dataset (.hvdata)")->required();
    ev->add_option("--out-dir", ev_args.out_dir,
                   "output directory (default: config out_dir)");
    ev->add_option("--base", ev_args.base, "single checkpoint used for both routes");
    ev->add_option("--id-ckpt", ev_args.id_ckpt, "id-side checkpoint");
    ev->add_option("--selfie-ckpt", ev_args.selfie_ckpt, "selfie-side checkpoint");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) return hv::cli::cmd_gen_data(gen_args);
    if (pre->parsed()) return hv::cli::cmd_pretrain(pre_args);
    if (fin->parsed()) return hv::cli::cmd_finetune(fin_args);
    if (cv->parsed()) return hv::cli::cmd_crossval(cv_args);
    if (ev->parsed()) return hv::cli::cmd_eval(ev_args);
    return 1;
}
