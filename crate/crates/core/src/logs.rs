//! CSV persistence for training, trace, evaluation, and adversary logs.
//!
//! Every writer formats numbers with Rust's shortest round-trip notation and
//! a fixed column order, so identical runs produce byte-identical files and
//! every stored `f64` parses back to the exact same bits.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::adversary::AdvEpisodeLog;
use crate::ddpg::{EpisodeLog, TraceRow};
use crate::harness::EpisodeMetrics;
use crate::{CoreError, Result};

/// A row type with a fixed CSV schema.
trait CsvRecord: Sized {
    const HEADER: &'static str;
    fn write_fields(&self, out: &mut String);
    fn from_fields(fields: &[&str]) -> Result<Self>;
}

fn parse_field<T: FromStr>(fields: &[&str], idx: usize, name: &str) -> Result<T> {
    let raw = fields
        .get(idx)
        .ok_or_else(|| CoreError::Usage(format!("missing column `{name}`")))?;
    raw.parse()
        .map_err(|_| CoreError::Usage(format!("column `{name}`: cannot parse {raw:?}")))
}

fn write_csv<T: CsvRecord>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(T::HEADER);
    text.push('\n');
    for row in rows {
        row.write_fields(&mut text);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_csv<T: CsvRecord>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == T::HEADER => {}
        other => {
            return Err(CoreError::Usage(format!(
                "{}: expected header {:?}, found {:?}",
                path.display(),
                T::HEADER,
                other.map(|(_, h)| h).unwrap_or("<empty file>")
            )))
        }
    }
    let expected_cols = T::HEADER.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(CoreError::Usage(format!(
                "{}: line {}: expected {} columns, found {}",
                path.display(),
                i + 1,
                expected_cols,
                fields.len()
            )));
        }
        rows.push(T::from_fields(&fields).map_err(|e| {
            CoreError::Usage(format!("{}: line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(rows)
}

// ─── Schemas ─────────────────────────────────────────────────────────────

impl CsvRecord for EpisodeLog {
    const HEADER: &'static str =
        "episode,total_reward,steps,collisions,breaches,min_th,noise_scale,mean_critic_loss,mean_q";

    fn write_fields(&self, out: &mut String) {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.total_reward,
            self.steps,
            self.collisions,
            self.breaches,
            self.min_th,
            self.noise_scale,
            self.mean_critic_loss,
            self.mean_q
        );
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        Ok(EpisodeLog {
            episode: parse_field(f, 0, "episode")?,
            total_reward: parse_field(f, 1, "total_reward")?,
            steps: parse_field(f, 2, "steps")?,
            collisions: parse_field(f, 3, "collisions")?,
            breaches: parse_field(f, 4, "breaches")?,
            min_th: parse_field(f, 5, "min_th")?,
            noise_scale: parse_field(f, 6, "noise_scale")?,
            mean_critic_loss: parse_field(f, 7, "mean_critic_loss")?,
            mean_q: parse_field(f, 8, "mean_q")?,
        })
    }
}

impl CsvRecord for TraceRow {
    const HEADER: &'static str =
        "episode,step,t,host_vel,lead_vel,x_rel,th,agent_pedal,executed_pedal,breached,reward";

    fn write_fields(&self, out: &mut String) {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.step,
            self.t,
            self.host_vel,
            self.lead_vel,
            self.x_rel,
            self.th,
            self.agent_pedal,
            self.executed_pedal,
            self.breached,
            self.reward
        );
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        Ok(TraceRow {
            episode: parse_field(f, 0, "episode")?,
            step: parse_field(f, 1, "step")?,
            t: parse_field(f, 2, "t")?,
            host_vel: parse_field(f, 3, "host_vel")?,
            lead_vel: parse_field(f, 4, "lead_vel")?,
            x_rel: parse_field(f, 5, "x_rel")?,
            th: parse_field(f, 6, "th")?,
            agent_pedal: parse_field(f, 7, "agent_pedal")?,
            executed_pedal: parse_field(f, 8, "executed_pedal")?,
            breached: parse_field(f, 9, "breached")?,
            reward: parse_field(f, 10, "reward")?,
        })
    }
}

impl CsvRecord for EpisodeMetrics {
    const HEADER: &'static str = "episode,seed,steps,total_reward,collision,breaches,\
        min_th,mean_th,min_x_rel,mean_x_rel,max_abs_v_rel,mean_abs_v_rel";

    fn write_fields(&self, out: &mut String) {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.seed,
            self.steps,
            self.total_reward,
            self.collision,
            self.breaches,
            self.min_th,
            self.mean_th,
            self.min_x_rel,
            self.mean_x_rel,
            self.max_abs_v_rel,
            self.mean_abs_v_rel
        );
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        Ok(EpisodeMetrics {
            episode: parse_field(f, 0, "episode")?,
            seed: parse_field(f, 1, "seed")?,
            steps: parse_field(f, 2, "steps")?,
            total_reward: parse_field(f, 3, "total_reward")?,
            collision: parse_field(f, 4, "collision")?,
            breaches: parse_field(f, 5, "breaches")?,
            min_th: parse_field(f, 6, "min_th")?,
            mean_th: parse_field(f, 7, "mean_th")?,
            min_x_rel: parse_field(f, 8, "min_x_rel")?,
            mean_x_rel: parse_field(f, 9, "mean_x_rel")?,
            max_abs_v_rel: parse_field(f, 10, "max_abs_v_rel")?,
            mean_abs_v_rel: parse_field(f, 11, "mean_abs_v_rel")?,
        })
    }
}

impl CsvRecord for AdvEpisodeLog {
    const HEADER: &'static str = "episode,eval,total_reward,steps,min_th,collision,policy_std";

    fn write_fields(&self, out: &mut String) {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            self.episode,
            self.eval,
            self.total_reward,
            self.steps,
            self.min_th,
            self.collision,
            self.policy_std
        );
    }

    fn from_fields(f: &[&str]) -> Result<Self> {
        Ok(AdvEpisodeLog {
            episode: parse_field(f, 0, "episode")?,
            eval: parse_field(f, 1, "eval")?,
            total_reward: parse_field(f, 2, "total_reward")?,
            steps: parse_field(f, 3, "steps")?,
            min_th: parse_field(f, 4, "min_th")?,
            collision: parse_field(f, 5, "collision")?,
            policy_std: parse_field(f, 6, "policy_std")?,
        })
    }
}

// ─── Public API ──────────────────────────────────────────────────────────

pub fn write_training_log(path: &Path, rows: &[EpisodeLog]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpisodeLog>> {
    read_csv(path)
}

pub fn write_eval_log(path: &Path, rows: &[EpisodeMetrics]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_eval_log(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    read_csv(path)
}

pub fn write_adversary_log(path: &Path, rows: &[AdvEpisodeLog]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_adversary_log(path: &Path) -> Result<Vec<AdvEpisodeLog>> {
    read_csv(path)
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    read_csv(path)
}

/// Incremental trace writer for long runs where buffering every row in
/// memory would be wasteful.  Produces bytes identical to [`write_trace`].
pub struct TraceWriter {
    inner: BufWriter<File>,
    scratch: String,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = BufWriter::new(File::create(path)?);
        inner.write_all(TraceRow::HEADER.as_bytes())?;
        inner.write_all(b"\n")?;
        Ok(TraceWriter { inner, scratch: String::new() })
    }

    pub fn write_row(&mut self, row: &TraceRow) -> Result<()> {
        self.scratch.clear();
        row.write_fields(&mut self.scratch);
        self.scratch.push('\n');
        self.inner.write_all(self.scratch.as_bytes())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_training_rows() -> Vec<EpisodeLog> {
        vec![
            EpisodeLog {
                episode: 0,
                total_reward: 0.1 + 0.2, // deliberately not exactly 0.3
                steps: 1500,
                collisions: 0,
                breaches: 3,
                min_th: 1.0 / 3.0,
                noise_scale: 0.997,
                mean_critic_loss: 1.25e-3,
                mean_q: -4.0,
            },
            EpisodeLog {
                episode: 1,
                total_reward: -12.5,
                steps: 431,
                collisions: 1,
                breaches: 0,
                min_th: 0.0,
                noise_scale: 0.994009,
                mean_critic_loss: f64::NAN,
                mean_q: 7.0,
            },
        ]
    }

    #[test]
    fn training_log_round_trips_exact_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.csv");
        let rows = sample_training_rows();
        write_training_log(&path, &rows).unwrap();
        let back = read_training_log(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.episode, b.episode);
            assert_eq!(a.total_reward.to_bits(), b.total_reward.to_bits());
            assert_eq!(a.min_th.to_bits(), b.min_th.to_bits());
            assert_eq!(a.noise_scale.to_bits(), b.noise_scale.to_bits());
            // NaN round-trips to the canonical quiet NaN
            assert_eq!(a.mean_critic_loss.is_nan(), b.mean_critic_loss.is_nan());
        }
    }

    #[test]
    fn repeated_writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let rows = sample_training_rows();
        write_training_log(&a, &rows).unwrap();
        write_training_log(&b, &rows).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn eval_and_adversary_logs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let eval_path = dir.path().join("eval.csv");
        let eval_rows = vec![EpisodeMetrics {
            episode: 3,
            seed: u64::MAX,
            steps: 1500,
            total_reward: 1234.5,
            collision: false,
            breaches: 0,
            min_th: 1.75,
            mean_th: 2.02,
            min_x_rel: 31.5,
            mean_x_rel: 60.1,
            max_abs_v_rel: 8.25,
            mean_abs_v_rel: 0.875,
        }];
        write_eval_log(&eval_path, &eval_rows).unwrap();
        assert_eq!(read_eval_log(&eval_path).unwrap(), eval_rows);

        let adv_path = dir.path().join("adv.csv");
        let adv_rows = vec![
            AdvEpisodeLog {
                episode: 0,
                eval: false,
                total_reward: 55.5,
                steps: 1500,
                min_th: 0.4375,
                collision: false,
                policy_std: 0.5,
            },
            AdvEpisodeLog {
                episode: 1,
                eval: true,
                total_reward: 110.0,
                steps: 220,
                min_th: 0.0,
                collision: true,
                policy_std: 0.25,
            },
        ];
        write_adversary_log(&adv_path, &adv_rows).unwrap();
        let back = read_adversary_log(&adv_path).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[1].collision && back[1].eval);
        assert_eq!(back[0].min_th.to_bits(), adv_rows[0].min_th.to_bits());
    }

    #[test]
    fn streaming_trace_matches_batch_write() {
        let dir = tempfile::tempdir().unwrap();
        let batch = dir.path().join("batch.csv");
        let streamed = dir.path().join("streamed.csv");
        let rows = vec![
            TraceRow {
                episode: 0,
                step: 0,
                t: 0.04,
                host_vel: 20.0,
                lead_vel: 22.5,
                x_rel: 45.0,
                th: 2.25,
                agent_pedal: 0.125,
                executed_pedal: 0.125,
                breached: false,
                reward: 1.0,
            },
            TraceRow {
                episode: 0,
                step: 1,
                t: 0.08,
                host_vel: 20.1,
                lead_vel: 22.5,
                x_rel: 45.1,
                th: 2.2437810945273634,
                agent_pedal: 0.9,
                executed_pedal: -0.4,
                breached: true,
                reward: 0.9,
            },
        ];
        write_trace(&batch, &rows).unwrap();
        let mut w = TraceWriter::create(&streamed).unwrap();
        for r in &rows {
            w.write_row(r).unwrap();
        }
        w.finish().unwrap();
        assert_eq!(std::fs::read(&batch).unwrap(), std::fs::read(&streamed).unwrap());
        assert_eq!(read_trace(&batch).unwrap(), rows);
    }

    #[test]
    fn malformed_files_are_rejected_with_context() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "nonsense header\n1,2,3\n").unwrap();
        let err = read_training_log(&path).unwrap_err().to_string();
        assert!(err.contains("expected header"), "{err}");

        let mut text = String::from(EpisodeLog::HEADER);
        text.push_str("\n0,1.0,1500,0,0,2.0,1.0,0.5\n"); // one column short
        std::fs::write(&path, &text).unwrap();
        let err = read_training_log(&path).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("columns"), "{err}");

        let mut text = String::from(EpisodeLog::HEADER);
        text.push_str("\n0,oops,1500,0,0,2.0,1.0,0.5,1.0\n");
        std::fs::write(&path, &text).unwrap();
        let err = read_training_log(&path).unwrap_err().to_string();
        assert!(err.contains("total_reward"), "{err}");
    }
}
