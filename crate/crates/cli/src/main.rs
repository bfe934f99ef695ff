use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_sync::graph::Graph;
use adaptive_sync::runner::{self, exit, fmt_num, RunError, RunOptions};
use adaptive_sync::scenario::{ScenarioError, ScenarioFile, Setup};
use clap::{Args, Parser, Subcommand};

/// Adaptive synchronization of diffusively coupled networks.
#[derive(Debug, Parser)]
#[command(name = "adaptive-sync", version)]
struct Cli {
    /// Suppress console output (files are still written).
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write CSV logs plus summary.txt.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Exit with status 2, without simulating, unless the certificate passes.
        #[arg(long)]
        require_cert: bool,
    },
    /// Check the scenario's certificate and print residuals and margins.
    CheckCertificate { scenario: PathBuf },
    /// Print Laplacian spectrum, λ₂ and the coupling threshold of a graph.
    GraphInfo(GraphInfoArgs),
    /// Run one simulation per value of a numeric scenario parameter.
    Sweep {
        scenario: PathBuf,
        /// Dotted path into the scenario, e.g. `adaptation.default_gain`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "sweep_out")]
        out_dir: PathBuf,
        /// Worker threads; 1 runs sequentially.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        require_cert: bool,
    },
}

#[derive(Debug, Args)]
struct GraphInfoArgs {
    /// Scenario file whose channel graphs (or PDE cell graph) to inspect.
    #[arg(conflicts_with_all = ["nodes", "links"])]
    scenario: Option<PathBuf>,
    /// Number of nodes of an ad-hoc graph.
    #[arg(long, requires = "links")]
    nodes: Option<usize>,
    /// 1-based links of an ad-hoc graph, e.g. `1-2,2-3`.
    #[arg(long, value_delimiter = ',')]
    links: Vec<String>,
    /// θ for the coupling threshold (defaults to the certificate's θ).
    #[arg(long)]
    theta: Option<f64>,
}

struct Console {
    quiet: bool,
}

impl Console {
    fn out(&self, s: &str) {
        if !self.quiet {
            print!("{s}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADAPTIVE_SYNC_LOG", "warn")).init();
    let cli = Cli::parse();
    let console = Console { quiet: cli.quiet };
    let code = match cli.command {
        Command::Run {
            scenario,
            out_dir,
            require_cert,
        } => cmd_run(&console, &scenario, &out_dir, require_cert),
        Command::CheckCertificate { scenario } => cmd_check(&console, &scenario),
        Command::GraphInfo(args) => cmd_graph_info(&console, &args),
        Command::Sweep {
            scenario,
            param,
            values,
            out_dir,
            parallel,
            require_cert,
        } => cmd_sweep(&console, &scenario, &param, &values, &out_dir, parallel, require_cert),
    };
    ExitCode::from(code as u8)
}

fn report_error(e: &RunError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn cmd_run(console: &Console, scenario: &Path, out_dir: &Path, require_cert: bool) -> i32 {
    match runner::run(scenario, out_dir, RunOptions { require_cert }) {
        Ok(art) => {
            if let Some(s) = art.file("summary.txt") {
                console.out(s);
            }
            art.status.exit_code()
        }
        Err(e) => report_error(&e),
    }
}

fn load(scenario: &Path) -> Result<Setup, RunError> {
    Ok(ScenarioFile::load(scenario)?.build()?)
}

fn cmd_check(console: &Console, scenario: &Path) -> i32 {
    let setup = match load(scenario) {
        Ok(s) => s,
        Err(e) => return report_error(&e),
    };
    let Some(outcome) = runner::evaluate_certificate(&setup) else {
        return report_error(&RunError::Scenario(ScenarioError::Schema(
            "scenario has no `certificate` section".into(),
        )));
    };
    let mut text = String::new();
    if let Some(s) = &outcome.structure {
        text += &format!("symmetry_residual: {}\n", fmt_num(s.symmetry_residual));
        text += &format!("p_min_eigenvalue: {}\n", fmt_num(s.p_min_eigenvalue));
        text += &format!("pb_residual: {}\n", fmt_num(s.pb_residual));
    }
    if let Some(i) = &outcome.inequality {
        text += &format!("worst_margin: {}\n", fmt_num(i.worst_margin));
        let loc: Vec<String> = i.worst_location.iter().map(|v| fmt_num(*v)).collect();
        text += &format!("worst_location: [{}]\n", loc.join(", "));
        text += &format!("samples: {}\n", i.n_samples);
    }
    if let Some(r) = &outcome.report {
        for (q, l) in r.lambda2.iter().enumerate() {
            text += &format!("lambda2_{}: {}\n", q + 1, fmt_num(*l));
        }
        text += &format!("kstar: {}\n", fmt_num(r.kstar));
    }
    match &outcome.error {
        None => text += "certificate: pass\n",
        Some(e) => text += &format!("certificate: fail ({e})\n"),
    }
    console.out(&text);
    if outcome.passed() {
        exit::OK
    } else {
        exit::CERTIFICATE_FAILED
    }
}

fn parse_link(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("link `{s}`: expected `i-j`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("link `{s}`: {e}"));
    Ok((p(a)?, p(b)?))
}

fn cmd_graph_info(console: &Console, args: &GraphInfoArgs) -> i32 {
    let schema = |m: String| report_error(&RunError::Scenario(ScenarioError::Schema(m)));
    let (graphs, cert_theta) = match (&args.scenario, args.nodes) {
        (Some(path), _) => match load(path) {
            Ok(setup) => {
                let theta = setup.certificate().map(|c| c.cert.theta);
                (setup.graphs(), theta)
            }
            Err(e) => return report_error(&e),
        },
        (None, Some(n)) => {
            let links: Result<Vec<_>, _> = args.links.iter().map(|s| parse_link(s)).collect();
            match links.and_then(|l| Graph::from_one_based(n, &l).map_err(|e| e.to_string())) {
                Ok(g) => (vec![g], None),
                Err(m) => return schema(m),
            }
        }
        (None, None) => return schema("graph-info needs a scenario file or --nodes/--links".into()),
    };
    let theta = args.theta.or(cert_theta);
    let mut text = String::new();
    for (q, g) in graphs.iter().enumerate() {
        if graphs.len() > 1 {
            text += &format!("channel {}:\n", q + 1);
        }
        text += &format!("nodes: {}\nlinks: {}\n", g.n_nodes(), g.n_links());
        let degrees: Vec<String> = g.degrees().iter().map(|d| d.to_string()).collect();
        text += &format!("degrees: {}\n", degrees.join(" "));
        let spectrum: Vec<String> = g.laplacian_spectrum().iter().map(|v| fmt_num(*v)).collect();
        text += &format!("laplacian_spectrum: {}\n", spectrum.join(" "));
        text += &format!("connected: {}\n", g.is_connected());
        text += &format!("lambda2: {}\n", fmt_num(g.lambda2()));
        if let Some(theta) = theta {
            match g.coupling_bound(theta) {
                Ok(k) => text += &format!("coupling_bound(theta={}): {}\n", fmt_num(theta), fmt_num(k)),
                Err(e) => text += &format!("coupling_bound: undefined ({e})\n"),
            }
        }
    }
    console.out(&text);
    exit::OK
}

fn cmd_sweep(
    console: &Console,
    scenario: &Path,
    param: &str,
    values: &[f64],
    out_dir: &Path,
    parallel: usize,
    require_cert: bool,
) -> i32 {
    match runner::sweep(
        scenario,
        param,
        values,
        out_dir,
        parallel.max(1),
        RunOptions { require_cert },
    ) {
        Ok(rows) => {
            let mut text = String::new();
            for r in &rows {
                let (link, w) = r.max_weight.clone().unwrap_or_default();
                let settled = r.settled_time.map_or("nan".into(), fmt_num);
                text += &format!(
                    "{param}={} final_sync_err={} max_weight={} ({link}) settled={} -> {}\n",
                    fmt_num(r.value),
                    fmt_num(r.final_sync_err),
                    fmt_num(w),
                    settled,
                    r.out_dir.display()
                );
            }
            console.out(&text);
            rows.iter().map(|r| r.exit_code).max().unwrap_or(exit::OK)
        }
        Err(e) => report_error(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn link_parsing() {
        assert_eq!(parse_link("1-2"), Ok((1, 2)));
        assert_eq!(parse_link(" 4 - 5 "), Ok((4, 5)));
        assert!(parse_link("12").is_err());
        assert!(parse_link("a-2").is_err());
    }
}
