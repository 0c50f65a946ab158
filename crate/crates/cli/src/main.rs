//! `plume` — batch front end for the methane retrieval pipeline.
//!
//! Subcommands cover the full chain: `lut-build` (synthetic radiance
//! tables), `simulate` (ground-truth scenes), `retrieve` (matched-filter
//! enhancement maps), `quantify` (IME flux estimates), `compare`
//! (multi-sensor reports), and `wind` (offline wind-record files).
//!
//! Every output embeds the tool version and sha256 digests of its
//! inputs, and output bodies carry no timestamps: a command re-run with
//! identical inputs and seed writes identical bytes at any `--threads`
//! setting. Exit codes are stable: 0 success, 2 input/contract error,
//! 3 numerical/degenerate error.

mod commands;
mod error;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "plume", version, about = "Methane plume retrieval and flux quantification")]
struct Cli {
    /// Cap the number of worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic radiance LUT from an absorption table.
    LutBuild {
        /// Two-column CSV: wavelength_nm,cross_section_per_ppmm.
        #[arg(long)]
        cross_section: PathBuf,
        /// JSON with the axis node lists and the continuum model.
        #[arg(long)]
        axes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve a methane enhancement map from a radiance cube.
    Retrieve {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        lut: PathBuf,
        /// Scene parameters JSON (altitude, water vapor, elevation, SZA).
        #[arg(long)]
        scene_params: PathBuf,
        /// Built-in sensor name (defaults to the cube's embedded spec).
        #[arg(long, conflicts_with = "sensor_file")]
        sensor: Option<String>,
        /// Custom sensor spec JSON.
        #[arg(long)]
        sensor_file: Option<PathBuf>,
        #[arg(long, value_parser = ["global", "columnwise"], default_value = "global")]
        mode: String,
        /// Covariance ridge fraction δ.
        #[arg(long, default_value_t = plume_core::retrieval::DEFAULT_DELTA)]
        delta: f64,
        /// Retrieval window "LO,HI" in nm (defaults to the sensor's).
        #[arg(long)]
        window: Option<String>,
        /// Polygon file of pixels to exclude from background statistics.
        #[arg(long)]
        exclude_polygon: Option<PathBuf>,
        /// Re-estimate statistics once with the high-ΔX tail excluded.
        #[arg(long)]
        reestimate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantify a plume's emission rate from an enhancement map.
    Quantify {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        polygon: PathBuf,
        #[arg(long)]
        wind: PathBuf,
        /// Built-in sensor name (defaults to the map's embedded spec).
        #[arg(long, conflicts_with = "sensor_file")]
        sensor: Option<String>,
        #[arg(long)]
        sensor_file: Option<PathBuf>,
        /// Atmosphere parameters JSON (defaults to standard values).
        #[arg(long)]
        atmosphere: Option<PathBuf>,
        /// Explicit effective wind speed, m/s (required for sensors
        /// without coefficients, e.g. GHGSAT).
        #[arg(long)]
        ueff: Option<f64>,
        /// Clamp negative in-mask enhancements to zero.
        #[arg(long)]
        clamp_negative: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic scene: a radiance cube plus its truth field.
    Simulate {
        /// Scene description JSON.
        #[arg(long)]
        scene: PathBuf,
        /// Override the scene's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_cube: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
    },
    /// Pair acquisitions and compare fluxes across sensors.
    Compare {
        /// JSON-lines file, one acquisition record per line.
        #[arg(long)]
        records: PathBuf,
        /// Site id (defaults to the first record's site).
        #[arg(long)]
        site: Option<String>,
        #[arg(long)]
        dt_max: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also print the report as an aligned text table.
        #[arg(long)]
        table: bool,
    },
    /// Write a wind-record file from explicit values. A live weather
    /// provider can slot in behind the same record shape; the core
    /// commands stay offline.
    Wind {
        #[arg(long)]
        u10: f64,
        #[arg(long)]
        direction: f64,
        #[arg(long, default_value = "manual")]
        source: String,
        /// ISO-8601 UTC timestamp, e.g. 2024-01-12T14:45:16Z.
        #[arg(long)]
        timestamp: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // worker count must never change results; it only caps parallelism
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("plume: failed to configure thread pool: {e}");
            std::process::exit(2);
        }
    }
    let result = match cli.command {
        Command::LutBuild {
            cross_section,
            axes,
            out,
        } => commands::lut_build(&cross_section, &axes, &out),
        Command::Retrieve {
            cube,
            lut,
            scene_params,
            sensor,
            sensor_file,
            mode,
            delta,
            window,
            exclude_polygon,
            reestimate,
            out,
        } => commands::retrieve(commands::RetrieveArgs {
            cube,
            lut,
            scene_params,
            sensor,
            sensor_file,
            mode,
            delta,
            window,
            exclude_polygon,
            reestimate,
            out,
        }),
        Command::Quantify {
            map,
            polygon,
            wind,
            sensor,
            sensor_file,
            atmosphere,
            ueff,
            clamp_negative,
            out,
        } => commands::quantify(commands::QuantifyArgs {
            map,
            polygon,
            wind,
            sensor,
            sensor_file,
            atmosphere,
            ueff,
            clamp_negative,
            out,
        }),
        Command::Simulate {
            scene,
            seed,
            out_cube,
            out_truth,
        } => commands::simulate(&scene, seed, &out_cube, &out_truth),
        Command::Compare {
            records,
            site,
            dt_max,
            out,
            table,
        } => commands::compare(&records, site.as_deref(), dt_max, &out, table),
        Command::Wind {
            u10,
            direction,
            source,
            timestamp,
            out,
        } => commands::wind(u10, direction, &source, &timestamp, &out),
    };
    if let Err(err) = result {
        eprintln!("plume: {}", err.message);
        std::process::exit(err.code);
    }
}
