//! File formats: the text model file, `key=value` configs, JSON run
//! manifests and the CSV outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::LearningCurve;
use crate::discretize::DiscretizationSpec;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::tables::ExitTable;
use crate::td::LogLine;

pub const MODEL_FILE_TAG: &str = "gamma-model v1";

/// Row-sum tolerance applied when loading a model file.
pub const MODEL_ROW_TOL: f64 = 1e-9;

/// Per-`(s, a)` probability rows with their discount, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub gamma: f64,
    pub table: ExitTable,
}

/// 17 significant digits: enough to reproduce any `f64` exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl ModelFile {
    pub fn new(gamma: f64, table: ExitTable) -> Self {
        Self { gamma, table }
    }

    pub fn n_states(&self) -> usize {
        self.table.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.table.n_actions()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let (n, na) = (self.n_states(), self.n_actions());
        writeln!(w, "{MODEL_FILE_TAG}")?;
        writeln!(w, "{n} {na} {}", fmt_f64(self.gamma))?;
        let mut line = String::new();
        for s in 0..n {
            for a in 0..na {
                line.clear();
                line.push_str(&format!("{s} {a}"));
                for &p in self.table.row(s, a) {
                    line.push(' ');
                    line.push_str(&fmt_f64(p));
                }
                writeln!(w, "{line}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(Error::Parse {
                    line: 0,
                    msg: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let (_, tag) = next("version tag")?;
        if tag.trim() != MODEL_FILE_TAG {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unrecognized version tag '{}'", tag.trim()),
            });
        }
        let (ln, header) = next("header")?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(ln, "header must be 'n_states n_actions gamma'"));
        }
        let n: usize = parse_field(ln, fields[0])?;
        let na: usize = parse_field(ln, fields[1])?;
        let gamma: f64 = parse_field(ln, fields[2])?;
        let mut table = ExitTable::zeros(n, na);
        for s in 0..n {
            for a in 0..na {
                let (ln, line) = next("probability row")?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != n + 2 {
                    return Err(parse_err(ln, &format!("expected {} fields", n + 2)));
                }
                let (fs, fa): (usize, usize) = (parse_field(ln, fields[0])?, parse_field(ln, fields[1])?);
                if (fs, fa) != (s, a) {
                    return Err(parse_err(ln, &format!("expected row ({s}, {a}), found ({fs}, {fa})")));
                }
                let row = table.row_mut(s, a);
                for (dst, src) in row.iter_mut().zip(&fields[2..]) {
                    *dst = parse_field(ln, src)?;
                }
                if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                    return Err(parse_err(ln, "probabilities must be finite and nonnegative"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > MODEL_ROW_TOL {
                    return Err(parse_err(ln, &format!("row sums to {sum}")));
                }
            }
        }
        if let Some((ln, line)) = lines.next() {
            if !line?.trim().is_empty() {
                return Err(parse_err(ln + 1, "trailing content"));
            }
        }
        Ok(Self { gamma, table })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(fs::File::open(path)?)
    }
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn parse_field<T: FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(line, &format!("cannot parse '{s}'")))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `key=value` configuration. Blank lines and `#` comments are ignored;
/// later assignments win.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(i + 1, &format!("expected key=value, got '{line}'")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(parse_err(i + 1, "empty key"));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Sets `key` only when absent.
    pub fn set_default(&mut self, key: &str, value: impl ToString) {
        self.entries
            .entry(key.to_string())
            .or_insert_with(|| value.to_string());
    }

    /// Entries of `other` override those of `self`.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::InvalidArgument(format!("config key '{key}': cannot parse '{v}'"))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                item.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("config key '{key}': cannot parse '{item}'"))
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Rejects keys outside `known`.
    pub fn ensure_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::InvalidArgument(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Record of one command invocation, sufficient to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Tabular MDP in JSON form: `transitions[s][a][s']` and `reward[s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpJson {
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<f64>,
}

impl MdpJson {
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let transitions = (0..mdp.n_states())
            .map(|s| {
                (0..mdp.n_actions())
                    .map(|a| mdp.transition_row(s, a).to_vec())
                    .collect()
            })
            .collect();
        Self {
            transitions,
            reward: mdp.reward().to_vec(),
        }
    }

    /// Validated MDP; ragged input is a shape error.
    pub fn to_mdp(&self) -> Result<TabularMdp> {
        let n = self.transitions.len();
        let na = self.transitions.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * na * n);
        for (s, rows) in self.transitions.iter().enumerate() {
            if rows.len() != na {
                return Err(Error::DimensionMismatch(format!(
                    "state {s} has {} actions, expected {na}",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "row ({s}, {a}) has {} entries, expected {n}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        TabularMdp::new(n, na, flat, self.reward.clone())
    }

    pub fn load(path: &Path) -> Result<TabularMdp> {
        let parsed: MdpJson = serde_json::from_slice(&fs::read(path)?)?;
        parsed.to_mdp()
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_result<T>(r: std::result::Result<T, csv::Error>) -> Result<T> {
    r.map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    })
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    csv_result(w.flush().map_err(csv::Error::from))
}

/// `gamma,gamma_tilde,steps_to_95`.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[(f64, f64, usize)]) -> Result<()> {
    let mut out = csv_writer(w);
    csv_result(out.write_record(["gamma", "gamma_tilde", "steps_to_95"]))?;
    for &(g, gt, steps) in rows {
        csv_result(out.write_record([g.to_string(), gt.to_string(), steps.to_string()]))?;
    }
    finish(out)
}

/// `state,value`.
pub fn write_values_csv<W: Write>(w: W, values: &[f64]) -> Result<()> {
    let mut out = csv_writer(w);
    csv_result(out.write_record(["state", "value"]))?;
    for (s, v) in values.iter().enumerate() {
        csv_result(out.write_record([s.to_string(), v.to_string()]))?;
    }
    finish(out)
}

/// `state,action,q`.
pub fn write_q_csv<W: Write>(w: W, n_actions: usize, q: &[f64]) -> Result<()> {
    let mut out = csv_writer(w);
    csv_result(out.write_record(["state", "action", "q"]))?;
    for (i, v) in q.iter().enumerate() {
        let (s, a) = (i / n_actions, i % n_actions);
        csv_result(out.write_record([s.to_string(), a.to_string(), v.to_string()]))?;
    }
    finish(out)
}

/// `state_index,dim0_center,...,value` over the grid of `spec`.
pub fn write_value_map_csv<W: Write>(w: W, spec: &DiscretizationSpec, values: &[f64]) -> Result<()> {
    if values.len() != spec.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a grid of {} cells",
            values.len(),
            spec.n_states()
        )));
    }
    let mut out = csv_writer(w);
    let mut header = vec!["state_index".to_string()];
    header.extend((0..spec.axes.len()).map(|d| format!("dim{d}_center")));
    header.push("value".into());
    csv_result(out.write_record(&header))?;
    for (i, v) in values.iter().enumerate() {
        let mut record = vec![i.to_string()];
        record.extend(spec.bin_center(i).iter().map(f64::to_string));
        record.push(v.to_string());
        csv_result(out.write_record(&record))?;
    }
    finish(out)
}

/// `episode,return_mean,return_std,estimator,seed`.
pub fn write_learning_curve_csv<W: Write>(w: W, curve: &LearningCurve) -> Result<()> {
    let mut out = csv_writer(w);
    csv_result(out.write_record(["episode", "return_mean", "return_std", "estimator", "seed"]))?;
    for p in &curve.points {
        csv_result(out.write_record([
            p.episode.to_string(),
            p.return_mean.to_string(),
            p.return_std.to_string(),
            curve.estimator.to_string(),
            curve.seed.to_string(),
        ]))?;
    }
    finish(out)
}

/// `step,loss` or `step,loss,tv_to_oracle` when any line carries a TV value.
pub fn write_train_log<W: Write>(mut w: W, log: &[LogLine]) -> Result<()> {
    let with_tv = log.iter().any(|l| l.tv_to_oracle.is_some());
    writeln!(w, "{}", if with_tv { "step,loss,tv_to_oracle" } else { "step,loss" })?;
    for line in log {
        match (with_tv, line.tv_to_oracle) {
            (true, None) => writeln!(w, "{line},")?,
            _ => writeln!(w, "{line}")?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{CurvePoint, Estimator};
    use crate::env::EnvKind;
    use crate::mdp::PolicyTable;
    use crate::oracle::exact_occupancy;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_model() -> ModelFile {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mdp = TabularMdp::random(4, 2, &mut rng);
        let pi = PolicyTable::random(4, 2, &mut rng);
        ModelFile::new(0.7, exact_occupancy(&mdp, &pi, 0.7).unwrap().table)
    }

    fn to_bytes(m: &ModelFile) -> Vec<u8> {
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        buf
    }

    #[test]
    fn model_file_layout() {
        let text = String::from_utf8(to_bytes(&sample_model())).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "gamma-model v1");
        assert!(lines[1].starts_with("4 2 "));
        assert_eq!(lines.len(), 2 + 8);
        assert!(lines[3].starts_with("0 1 "));
        assert_eq!(lines[3].split_whitespace().count(), 6);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let model = sample_model();
        let first = to_bytes(&model);
        let back = ModelFile::read(&first[..]).unwrap();
        assert_eq!(back, model);
        assert_eq!(to_bytes(&back), first);
    }

    #[test]
    fn model_file_rejections() {
        let good = String::from_utf8(to_bytes(&sample_model())).unwrap();
        let bad_tag = good.replacen("gamma-model v1", "gamma-model v2", 1);
        assert!(matches!(ModelFile::read(bad_tag.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let truncated: String = good.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(ModelFile::read(truncated.as_bytes()).is_err());
        let text = "gamma-model v1\n1 1 0.5\n0 0 0.9\n";
        assert!(matches!(ModelFile::read(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let text = "gamma-model v1\n2 1 0.5\n0 0 1.0 0.0\n0 0 0.0 1.0\n";
        assert!(ModelFile::read(text.as_bytes()).is_err());
        let text = "gamma-model v1\n1 1 0.5\n0 0 1.0\nextra\n";
        assert!(ModelFile::read(text.as_bytes()).is_err());
    }

    #[test]
    fn model_file_accepts_tiny_row_error() {
        let text = "gamma-model v1\n2 1 0\n0 0 0.5000000000001 0.5\n1 0 0 1\n";
        let m = ModelFile::read(text.as_bytes()).unwrap();
        assert_eq!(m.table.row(1, 0), &[0.0, 1.0]);
    }

    #[test]
    fn save_and_load_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let model = sample_model();
        model.save(&path).unwrap();
        assert_eq!(ModelFile::load(&path).unwrap(), model);
        assert!(!dir.path().join("m.txt.tmp").exists());
    }

    #[test]
    fn config_parsing() {
        let c = Config::parse("# header\nenv = pendulum\nbins_theta=41 # inline\n\nbins_theta=21\nlist=0,0.5, 0.9\n").unwrap();
        assert_eq!(c.raw("env"), Some("pendulum"));
        assert_eq!(c.get::<usize>("bins_theta").unwrap(), Some(21));
        assert_eq!(c.get::<usize>("missing").unwrap(), None);
        assert_eq!(c.get_or("missing", 3usize).unwrap(), 3);
        assert!(c.get::<usize>("env").is_err());
        assert_eq!(c.get_list::<f64>("list").unwrap(), Some(vec![0.0, 0.5, 0.9]));
        assert!(Config::parse("no equals sign").is_err());
        assert!(Config::parse("=1").is_err());
        assert!(c.ensure_known(&["env", "bins_theta", "list"]).is_ok());
        assert!(c.ensure_known(&["env"]).is_err());
    }

    #[test]
    fn config_merge_precedence() {
        let mut base = Config::parse("a=1\nb=2").unwrap();
        base.merge(&Config::parse("b=3\nc=4").unwrap());
        base.set_default("a", 9);
        base.set_default("d", 5);
        assert_eq!(base.to_text(), "a=1\nb=3\nc=4\nd=5\n");
        assert_eq!(Config::parse(&base.to_text()).unwrap(), base);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = RunManifest {
            command: "oracle".into(),
            config: Config::parse("env=swap_chain\ngamma=0.5").unwrap().entries().clone(),
            seed: 42,
            artifacts: vec!["occupancy.txt".into()],
            duration_secs: 0.25,
        };
        manifest.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), manifest);
    }

    #[test]
    fn mdp_json_round_trip_and_validation() {
        let mdp = TabularMdp::swap_chain();
        let json = serde_json::to_string(&MdpJson::from_mdp(&mdp)).unwrap();
        let back: MdpJson = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_mdp().unwrap(), mdp);
        let bad = MdpJson {
            transitions: vec![vec![vec![0.9, 0.0]], vec![vec![0.0, 1.0]]],
            reward: vec![0.0, 1.0],
        };
        assert!(matches!(bad.to_mdp(), Err(Error::InvalidMdp(_))));
        let ragged = MdpJson {
            transitions: vec![vec![vec![1.0]], vec![]],
            reward: vec![0.0, 0.0],
        };
        assert!(ragged.to_mdp().is_err());
    }

    fn parse_csv(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers().unwrap().iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.unwrap().iter().map(String::from).collect())
            .collect();
        (header, rows)
    }

    #[test]
    fn csv_outputs() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[(0.0, 0.99, 299), (0.8, 0.99, 59)]).unwrap();
        let (h, rows) = parse_csv(&buf);
        assert_eq!(h, ["gamma", "gamma_tilde", "steps_to_95"]);
        assert_eq!(rows[0], ["0", "0.99", "299"]);
        assert!(buf.ends_with(b"\n"));

        let spec = DiscretizationSpec::for_env(EnvKind::Pendulum, &[3, 2], 5).unwrap();
        let mut buf = Vec::new();
        write_value_map_csv(&mut buf, &spec, &[1.5; 6]).unwrap();
        let (h, rows) = parse_csv(&buf);
        assert_eq!(h, ["state_index", "dim0_center", "dim1_center", "value"]);
        assert_eq!(rows.len(), 6);
        let center: f64 = rows[0][1].parse().unwrap();
        assert!((center - spec.bin_center(0)[0]).abs() < 1e-15);
        assert!(write_value_map_csv(Vec::new(), &spec, &[0.0; 5]).is_err());

        let curve = LearningCurve {
            estimator: Estimator::GammaMve,
            seed: 3,
            points: vec![CurvePoint { episode: 10, return_mean: 20.5, return_std: 0.0 }],
        };
        let mut buf = Vec::new();
        write_learning_curve_csv(&mut buf, &curve).unwrap();
        let (h, rows) = parse_csv(&buf);
        assert_eq!(h, ["episode", "return_mean", "return_std", "estimator", "seed"]);
        assert_eq!(rows[0], ["10", "20.5", "0", "gamma_mve", "3"]);

        let mut buf = Vec::new();
        write_values_csv(&mut buf, &[0.25, -1.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "state,value\n0,0.25\n1,-1\n");

        let mut buf = Vec::new();
        write_q_csv(&mut buf, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, rows) = parse_csv(&buf);
        assert_eq!(rows[3], ["1", "1", "4"]);
    }

    #[test]
    fn train_log_headers() {
        let mut buf = Vec::new();
        let log = [LogLine { step: 10, loss: 0.5, tv_to_oracle: None }];
        write_train_log(&mut buf, &log).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("step,loss\n10,"));
        let mut buf = Vec::new();
        let log = [LogLine { step: 10, loss: 0.5, tv_to_oracle: Some(0.01) }];
        write_train_log(&mut buf, &log).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (h, rows) = parse_csv(text.as_bytes());
        assert_eq!(h, ["step", "loss", "tv_to_oracle"]);
        assert_eq!(rows[0].len(), 3);
    }

    proptest! {
        #[test]
        fn model_file_round_trip_random(seed in 0u64..500, n in 1usize..6, na in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mdp = TabularMdp::random(n, na, &mut rng);
            let model = ModelFile::new(0.3, ExitTable::from_vec(n, na, mdp.transitions().to_vec()).unwrap());
            let first = to_bytes(&model);
            let back = ModelFile::read(&first[..]).unwrap();
            prop_assert_eq!(&back, &model);
            prop_assert_eq!(to_bytes(&back), first);
        }
    }
}
