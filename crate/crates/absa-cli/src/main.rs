//! `absa` — train, tune, evaluate and serve the aspect-based sentiment
//! classifiers from the command line.

mod commands;
mod config;
mod records;
mod serve;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "absa",
    version,
    about = "Joint aspect-category and polarity classification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train subword skip-gram embeddings on a plain-text corpus.
    EmbedTrain(commands::EmbedTrainArgs),
    /// Train a classifier and persist the best-dev model.
    Train(commands::TrainArgs),
    /// Random search over learning rate and batch size.
    Tune(commands::TuneArgs),
    /// Evaluate a trained model on a dataset split.
    Eval(commands::EvalArgs),
    /// Predict documents read line-by-line from standard input.
    Predict(commands::PredictArgs),
    /// Serve predictions over HTTP.
    Serve(commands::ServeArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::EmbedTrain(args) => commands::embed_train(args),
        Command::Train(args) => commands::train(args),
        Command::Tune(args) => commands::tune(args),
        Command::Eval(args) => commands::eval(args),
        Command::Predict(args) => commands::predict(args),
        Command::Serve(args) => commands::serve(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
