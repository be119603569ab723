//! Output files and the per-stage log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::config::Settings;
use crate::{Context, Failure};

static QUIET: AtomicBool = AtomicBool::new(false);

pub fn set_quiet(q: bool) {
    QUIET.store(q, Ordering::Relaxed);
}

/// One log line on stderr.
pub fn log(command: &str, msg: impl AsRef<str>) {
    if !QUIET.load(Ordering::Relaxed) {
        eprintln!("[{command}] {}", msg.as_ref());
    }
}

fn io_failure(path: &std::path::Path, e: impl std::fmt::Display) -> Failure {
    Failure::input(format!("cannot write {}: {e}", path.display()))
}

/// Create `name` in the output directory and fill it through `fill`.
pub fn write_file(
    ctx: &Context,
    name: &str,
    fill: impl FnOnce(&mut BufWriter<File>) -> Result<(), Failure>,
) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(&ctx.out).map_err(|e| io_failure(&ctx.out, e))?;
    let path = ctx.out.join(name);
    let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
    let mut w = BufWriter::new(file);
    fill(&mut w)?;
    w.flush().map_err(|e| io_failure(&path, e))?;
    Ok(path)
}

/// CSV file whose first line records the resolved configuration.
pub fn write_csv(
    ctx: &Context,
    name: &str,
    command: &str,
    settings: &Settings,
    body: &str,
) -> Result<PathBuf, Failure> {
    let path = write_file(ctx, name, |w| {
        writeln!(w, "{}", settings.comment_line(command))
            .and_then(|_| w.write_all(body.as_bytes()))
            .map_err(|e| Failure::input(e.to_string()))
    })?;
    log(command, format!("wrote {}", path.display()));
    Ok(path)
}

/// Distinct, deterministic colours per label; unlabelled cells are black.
pub fn label_colours(labels: &[Option<u32>]) -> Vec<[u8; 3]> {
    labels
        .iter()
        .map(|l| match l {
            None => [0, 0, 0],
            Some(k) => {
                // Golden-angle hue walk at fixed saturation and value.
                let hue = (*k as f64 * 0.618_033_988_75).fract() * 6.0;
                let sector = hue.floor() as u32;
                let f = hue - sector as f64;
                let (hi, lo) = (230.0, 60.0);
                let up = lo + (hi - lo) * f;
                let down = hi - (hi - lo) * f;
                let (r, g, b) = match sector {
                    0 => (hi, up, lo),
                    1 => (down, hi, lo),
                    2 => (lo, hi, up),
                    3 => (lo, down, hi),
                    4 => (up, lo, hi),
                    _ => (hi, lo, down),
                };
                [r as u8, g as u8, b as u8]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colours_are_distinct_for_small_label_sets() {
        let labels: Vec<Option<u32>> = (0..8).map(Some).chain([None]).collect();
        let c = label_colours(&labels);
        assert_eq!(c[8], [0, 0, 0]);
        for a in 0..8 {
            for b in 0..a {
                assert_ne!(c[a], c[b]);
            }
        }
    }
}
