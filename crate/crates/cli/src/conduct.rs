//! Line-oriented trial conduct.
//!
//! Each prompt accepts:
//!
//! * `0 1 0` : outcomes at the recommended dose (1 = DLT)
//! * `d3 0 1 0` : outcomes at dose 3, recorded as an override if it differs
//! * `stop [reason]` : terminate early and report the MTD
//! * `quit` : leave without terminating

use std::io::{BufRead, Write};
use std::path::Path;

use escalate_core::{Design, DesignSpec, TrialState};

fn print_state(out: &mut impl Write, design: &Design, state: &TrialState) -> std::io::Result<()> {
    writeln!(out, "patients {} / {}, DLTs {}", state.patients_treated(), design.spec().max_patients, state.dlt_total())?;
    writeln!(out, "{:>5} {:>10} {:>12}", "dose", "mean tox", "criterion")?;
    let rec = design.next_dose(state).ok();
    for e in design.evaluate(state) {
        let mark = if Some(e.dose) == rec { " <" } else { "" };
        writeln!(out, "{:>5} {:>10.4} {:>12.6}{mark}", e.dose, e.post_mean_tox, e.criterion_value)?;
    }
    Ok(())
}

fn parse_outcomes(words: &[&str]) -> Result<Vec<bool>, String> {
    words
        .iter()
        .map(|w| match *w {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("outcome `{other}` is not 0 or 1")),
        })
        .collect()
}

pub fn run(path: &Path) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let spec: DesignSpec = serde_path_to_error::deserialize(de)
        .map_err(|e| format!("{} at `{}`: {}", path.display(), e.path(), e.inner()))?;
    let design = Design::new(spec).map_err(|e| e.to_string())?;
    let mut state = design.start();
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| e.to_string();

    writeln!(out, "design {}", design.spec().display_name()).map_err(io)?;
    let mut lines = stdin.lock().lines();
    while !design.is_complete(&state) {
        print_state(&mut out, &design, &state).map_err(io)?;
        let rec = design.next_dose(&state).map_err(|e| e.to_string())?;
        write!(out, "next cohort at d{rec}> ").map_err(io)?;
        out.flush().map_err(io)?;
        let Some(line) = lines.next() else {
            writeln!(out).map_err(io)?;
            return Ok(());
        };
        let line = line.map_err(io)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.first().copied() {
            None => continue,
            Some("quit") => return Ok(()),
            Some("stop") => {
                let reason = (words.len() > 1).then(|| words[1..].join(" "));
                design.terminate(&mut state, reason);
            }
            Some(w) => {
                let (dose, rest) = match w.strip_prefix('d').map(str::parse::<usize>) {
                    Some(Ok(d)) => (d, &words[1..]),
                    Some(Err(_)) => {
                        writeln!(out, "cannot read dose `{w}`").map_err(io)?;
                        continue;
                    }
                    None => (rec, &words[..]),
                };
                let recorded = parse_outcomes(rest)
                    .and_then(|ys| design.apply_cohort(&mut state, dose, &ys, dose != rec).map_err(|e| e.to_string()));
                if let Err(e) = recorded {
                    writeln!(out, "rejected: {e}").map_err(io)?;
                }
            }
        }
    }
    print_state(&mut out, &design, &state).map_err(io)?;
    match design.select_mtd(&state) {
        Ok(mtd) => writeln!(out, "trial complete; selected MTD d{mtd}").map_err(io)?,
        Err(e) => writeln!(out, "trial complete; no MTD ({e})").map_err(io)?,
    }
    Ok(())
}
