// SPDX-License-Identifier: Apache-2.0

//! INI-style run configuration.
//!
//! ```ini
//! [grid]
//! n1 = 12
//! n2 = 12
//! n3 = 12
//! n4 = 13
//!
//! [background]
//! kind = flat              # or synthetic:<path>
//!
//! [flow]
//! flow = qflow             # or tflow
//! initial = mode:0.1,1,0,0,1
//! f = one                  # or cosine:<axis>,<amp> | file:<path>
//! dt0 = 1e-3
//! ```
//!
//! Unknown sections and keys are rejected with a suggestion; paths are
//! resolved relative to the configuration file.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{BackgroundGeometry, SyntheticFields};
use crate::grid::{BoundaryField, Face, Grid, ScalarField};
use crate::qflow::FlowConfig;
use crate::snapshot::{read_snapshot_file, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSelect {
    Q,
    T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundSpec {
    Flat,
    Synthetic(PathBuf),
}

/// Initial conformal factor.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Zero,
    /// `amp · Π cos(2π kᵢ xᵢ / Lᵢ) · cos(m π x4)`
    Mode {
        amp: f64,
        k: [u32; 3],
        m4: u32,
    },
    File(PathBuf),
    /// Seeded random combination of low modes with `max|u| = amp`.
    Random {
        amp: f64,
    },
}

/// Target profile `F` or `S`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSpec {
    One,
    /// `1 + amp · cos(2π x_axis / L_axis)`, axis in 1..=3
    Cosine {
        axis: usize,
        amp: f64,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Location of the file this was parsed from.
    pub path: PathBuf,
    pub dims: [usize; 4],
    pub lengths: [f64; 3],
    pub background: BackgroundSpec,
    pub flow: FlowSelect,
    pub initial: InitialSpec,
    pub profile: ProfileSpec,
    pub flow_config: FlowConfig,
    pub seed: u64,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("grid", &["n1", "n2", "n3", "n4", "l1", "l2", "l3"]),
    ("background", &["kind"]),
    (
        "flow",
        &[
            "flow",
            "initial",
            "f",
            "s",
            "dt0",
            "dt_min",
            "dt_max",
            "x_tol",
            "max_steps",
            "seed",
        ],
    ),
    ("solver", &["cg_tol", "cg_max_iter", "extension_tol"]),
    ("output", &["snapshot_every"]),
];

/// Parsed `section → key → (value, line)` table.
#[derive(Debug, Default)]
pub(crate) struct Ini {
    pub(crate) path: PathBuf,
    pub(crate) entries: BTreeMap<(String, String), (String, usize)>,
    pub(crate) sections: BTreeMap<String, usize>,
}

pub(crate) fn err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn suggestion<'a>(word: &str, candidates: impl Iterator<Item = &'a str>) -> String {
    let best = candidates
        .map(|c| (strsim::levenshtein(word, c), c))
        .min_by_key(|(d, _)| *d);
    match best {
        Some((d, c)) if d <= 3 => format!(" (did you mean `{c}`?)"),
        _ => String::new(),
    }
}

/// Tokenizes INI text, validating section and key names against `schema`.
pub(crate) fn parse_ini(text: &str, path: &Path, schema: &[(&str, &[&str])]) -> Result<Ini> {
    let mut ini = Ini {
        path: path.to_path_buf(),
        ..Ini::default()
    };
    let mut section: Option<(&str, &[&str])> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find(['#', ';']) {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(path, line_no, "unterminated section header"))?
                .trim();
            let found = schema.iter().find(|(s, _)| *s == name).ok_or_else(|| {
                err(
                    path,
                    line_no,
                    format!(
                        "unknown section [{name}]{}",
                        suggestion(name, schema.iter().map(|(s, _)| *s))
                    ),
                )
            })?;
            if ini.sections.insert(name.to_string(), line_no).is_some() {
                return Err(err(path, line_no, format!("duplicate section [{name}]")));
            }
            section = Some(*found);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            err(
                path,
                line_no,
                format!("expected `key = value`, found {line:?}"),
            )
        })?;
        let key = key.trim();
        let value = value.trim();
        let (sname, keys) =
            section.ok_or_else(|| err(path, line_no, "key outside of any section"))?;
        if !keys.contains(&key) {
            return Err(err(
                path,
                line_no,
                format!(
                    "unknown key `{key}` in [{sname}]{}",
                    suggestion(key, keys.iter().copied())
                ),
            ));
        }
        let slot = (sname.to_string(), key.to_string());
        if ini.entries.contains_key(&slot) {
            return Err(err(
                path,
                line_no,
                format!("duplicate key `{key}` in [{sname}]"),
            ));
        }
        ini.entries.insert(slot, (value.to_string(), line_no));
    }
    Ok(ini)
}

impl Ini {
    pub(crate) fn get(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|(v, l)| (v.as_str(), *l))
    }

    fn require_section(&self, section: &str) -> Result<usize> {
        self.sections
            .get(section)
            .copied()
            .ok_or_else(|| err(&self.path, 0, format!("missing section [{section}]")))
    }

    pub(crate) fn parse<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        what: &str,
    ) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| {
                err(
                    &self.path,
                    line,
                    format!("`{key}` must be {what}, found {v:?}"),
                )
            }),
        }
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        let base = self.path.parent().unwrap_or_else(|| Path::new("."));
        base.join(rel)
    }
}

fn parse_reals(text: &str) -> Option<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().ok())
        .collect()
}

fn parse_initial(ini: &Ini) -> Result<InitialSpec> {
    let Some((v, line)) = ini.get("flow", "initial") else {
        return Ok(InitialSpec::Zero);
    };
    let bad = |msg: &str| err(&ini.path, line, format!("initial: {msg}, found {v:?}"));
    if v == "zero" {
        return Ok(InitialSpec::Zero);
    }
    if let Some(rest) = v.strip_prefix("mode:") {
        let nums =
            parse_reals(rest).ok_or_else(|| bad("expected mode:<amp>,<k1>,<k2>,<k3>,<m4>"))?;
        if nums.len() != 5 || nums[1..].iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(bad(
                "expected mode:<amp>,<k1>,<k2>,<k3>,<m4> with nonnegative integer wave numbers",
            ));
        }
        return Ok(InitialSpec::Mode {
            amp: nums[0],
            k: [nums[1] as u32, nums[2] as u32, nums[3] as u32],
            m4: nums[4] as u32,
        });
    }
    if let Some(rest) = v.strip_prefix("file:") {
        return Ok(InitialSpec::File(ini.resolve(rest.trim())));
    }
    if let Some(rest) = v.strip_prefix("random:") {
        let amp = rest
            .trim()
            .parse::<f64>()
            .map_err(|_| bad("expected random:<amp>"))?;
        return Ok(InitialSpec::Random { amp });
    }
    Err(bad("expected zero | mode:... | file:<path> | random:<amp>"))
}

fn parse_profile(ini: &Ini, key: &str) -> Result<ProfileSpec> {
    let Some((v, line)) = ini.get("flow", key) else {
        return Ok(ProfileSpec::One);
    };
    let name = key.to_uppercase();
    if v == "one" {
        return Ok(ProfileSpec::One);
    }
    if let Some(rest) = v.strip_prefix("cosine:") {
        let nums = parse_reals(rest).filter(|n| n.len() == 2).ok_or_else(|| {
            err(
                &ini.path,
                line,
                format!("{key}: expected cosine:<axis>,<amp>, found {v:?}"),
            )
        })?;
        let axis = nums[0];
        if !(axis == 1.0 || axis == 2.0 || axis == 3.0) {
            return Err(err(
                &ini.path,
                line,
                format!("{key}: cosine axis must be 1, 2 or 3"),
            ));
        }
        let amp = nums[1];
        if amp.is_nan() || amp.abs() >= 1.0 {
            return Err(err(
                &ini.path,
                line,
                format!("{key}: amplitude {amp} makes {name} <= 0 somewhere; {name} must be a positive function"),
            ));
        }
        return Ok(ProfileSpec::Cosine {
            axis: axis as usize,
            amp,
        });
    }
    if let Some(rest) = v.strip_prefix("file:") {
        return Ok(ProfileSpec::File(ini.resolve(rest.trim())));
    }
    Err(err(
        &ini.path,
        line,
        format!("{key}: expected one | cosine:<axis>,<amp> | file:<path>, found {v:?}"),
    ))
}

/// Parses configuration text; `path` is used for error messages and to
/// resolve relative file references.
pub fn parse_config_str(text: &str, path: &Path) -> Result<RunConfig> {
    let ini = parse_ini(text, path, SECTIONS)?;
    ini.require_section("grid")?;
    let flow_line = ini.require_section("flow")?;

    let mut dims = [0usize; 4];
    for (i, key) in ["n1", "n2", "n3", "n4"].iter().enumerate() {
        dims[i] = ini
            .parse::<usize>("grid", key, "a positive integer")?
            .ok_or_else(|| {
                err(
                    path,
                    ini.sections["grid"],
                    format!("missing key `{key}` in [grid]"),
                )
            })?;
    }
    let mut lengths = [1.0; 3];
    for (i, key) in ["l1", "l2", "l3"].iter().enumerate() {
        if let Some(l) = ini.parse::<f64>("grid", key, "a positive number")? {
            lengths[i] = l;
        }
    }
    if let Err(e) = Grid::new(dims, lengths) {
        return Err(err(path, ini.sections["grid"], e.to_string()));
    }

    let background = match ini.get("background", "kind") {
        None | Some(("flat", _)) => BackgroundSpec::Flat,
        Some((v, line)) => match v.strip_prefix("synthetic:") {
            Some(rest) => BackgroundSpec::Synthetic(ini.resolve(rest.trim())),
            None => {
                return Err(err(
                    path,
                    line,
                    format!("kind: expected flat | synthetic:<path>, found {v:?}"),
                ))
            }
        },
    };

    let flow = match ini.get("flow", "flow") {
        Some(("qflow", _)) => FlowSelect::Q,
        Some(("tflow", _)) => FlowSelect::T,
        Some((v, line)) => {
            return Err(err(
                path,
                line,
                format!("flow: expected qflow | tflow, found {v:?}"),
            ))
        }
        None => return Err(err(path, flow_line, "missing key `flow` in [flow]")),
    };
    let initial = parse_initial(&ini)?;
    let (wanted, other) = match flow {
        FlowSelect::Q => ("f", "s"),
        FlowSelect::T => ("s", "f"),
    };
    if let Some((_, line)) = ini.get("flow", other) {
        return Err(err(
            path,
            line,
            format!("`{other}` is not used by this flow; the target profile key is `{wanted}`"),
        ));
    }
    let profile = parse_profile(&ini, wanted)?;

    let mut fc = FlowConfig::default();
    let reals: [(&str, &str, &mut f64); 6] = [
        ("flow", "dt0", &mut fc.dt0),
        ("flow", "dt_min", &mut fc.dt_min),
        ("flow", "dt_max", &mut fc.dt_max),
        ("flow", "x_tol", &mut fc.x_tol),
        ("solver", "cg_tol", &mut fc.cg_tol),
        ("solver", "extension_tol", &mut fc.extension_tol),
    ];
    for (section, key, slot) in reals {
        if let Some(v) = ini.parse::<f64>(section, key, "a number")? {
            if !(v.is_finite() && v > 0.0) {
                let line = ini.get(section, key).map(|(_, l)| l).unwrap_or(0);
                return Err(err(
                    path,
                    line,
                    format!("`{key}` must be positive, found {v}"),
                ));
            }
            *slot = v;
        }
    }
    if ini.get("flow", "dt_max").is_none() {
        fc.dt_max = fc.dt_max.max(fc.dt0);
    }
    if let Some(n) = ini.parse::<usize>("flow", "max_steps", "a nonnegative integer")? {
        fc.max_steps = n;
    }
    if let Some(n) = ini.parse::<usize>("solver", "cg_max_iter", "a positive integer")? {
        fc.cg_max_iter = n;
    }
    if let Some(n) = ini.parse::<usize>("output", "snapshot_every", "a nonnegative integer")? {
        fc.snapshot_every = n;
    }
    if let Err(e) = fc.validate() {
        return Err(err(path, flow_line, e.to_string()));
    }
    let seed = ini
        .parse::<u64>("flow", "seed", "a nonnegative integer")?
        .unwrap_or(0);

    Ok(RunConfig {
        path: path.to_path_buf(),
        dims,
        lengths,
        background,
        flow,
        initial,
        profile,
        flow_config: fc,
        seed,
    })
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| err(path, 0, format!("cannot read: {e}")))?;
    parse_config_str(&text, path)
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.lengths)
    }

    pub fn background(&self) -> Result<BackgroundGeometry> {
        let grid = self.grid()?;
        match &self.background {
            BackgroundSpec::Flat => Ok(BackgroundGeometry::flat(grid)),
            BackgroundSpec::Synthetic(p) => load_synthetic(p, grid),
        }
    }

    /// Initial conformal factor on the full grid.
    pub fn initial_field(&self, grid: Grid) -> Result<ScalarField> {
        match &self.initial {
            InitialSpec::Zero => Ok(ScalarField::zeros(grid)),
            InitialSpec::Mode { amp, k, m4 } => Ok(mode_field(grid, *amp, *k, *m4)),
            InitialSpec::Random { amp } => Ok(random_field(grid, *amp, self.seed)),
            InitialSpec::File(p) => match read_snapshot_file(p, grid)? {
                Snapshot::Volume(f) => Ok(f),
                Snapshot::Boundary(_) => Err(Error::Snapshot(format!(
                    "{}: initial data must be a volume field",
                    p.display()
                ))),
            },
        }
    }

    /// Initial boundary trace for the T-flow.
    pub fn initial_trace(&self, grid: Grid) -> Result<BoundaryField> {
        if let InitialSpec::File(p) = &self.initial {
            if let Snapshot::Boundary(b) = read_snapshot_file(p, grid)? {
                if b.face() != Face::Both {
                    return Err(Error::Snapshot(format!(
                        "{}: trace must cover both faces",
                        p.display()
                    )));
                }
                return Ok(b);
            }
        }
        Ok(self.initial_field(grid)?.trace(Face::Both))
    }

    pub fn profile_volume(&self, grid: Grid) -> Result<ScalarField> {
        match &self.profile {
            ProfileSpec::One => Ok(ScalarField::constant(grid, 1.0)),
            ProfileSpec::Cosine { axis, amp } => {
                let l = grid.lengths()[axis - 1];
                Ok(ScalarField::from_fn(grid, |x| {
                    1.0 + amp * (2.0 * PI * x[axis - 1] / l).cos()
                }))
            }
            ProfileSpec::File(p) => match read_snapshot_file(p, grid)? {
                Snapshot::Volume(f) => Ok(f),
                Snapshot::Boundary(_) => Err(Error::Snapshot(format!(
                    "{}: F must be a volume field",
                    p.display()
                ))),
            },
        }
    }

    pub fn profile_boundary(&self, grid: Grid) -> Result<BoundaryField> {
        match &self.profile {
            ProfileSpec::One => Ok(BoundaryField::constant(grid, Face::Both, 1.0)),
            ProfileSpec::Cosine { axis, amp } => {
                let l = grid.lengths()[axis - 1];
                Ok(BoundaryField::from_fn(grid, Face::Both, |x| {
                    1.0 + amp * (2.0 * PI * x[axis - 1] / l).cos()
                }))
            }
            ProfileSpec::File(p) => match read_snapshot_file(p, grid)? {
                Snapshot::Boundary(b) if b.face() == Face::Both => Ok(b),
                _ => Err(Error::Snapshot(format!(
                    "{}: S must be a boundary field on both faces",
                    p.display()
                ))),
            },
        }
    }
}

/// `amp · Π cos(2π kᵢ xᵢ / Lᵢ) · cos(m π x4)`
pub fn mode_field(grid: Grid, amp: f64, k: [u32; 3], m4: u32) -> ScalarField {
    let l = grid.lengths();
    ScalarField::from_fn(grid, |x| {
        let mut v = amp * (m4 as f64 * PI * x[3]).cos();
        for i in 0..3 {
            v *= (2.0 * PI * k[i] as f64 * x[i] / l[i]).cos();
        }
        v
    })
}

/// Seeded combination of low Fourier modes with `∂ₙu = 0`, scaled to
/// `max|u| = amp`.
pub fn random_field(grid: Grid, amp: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = grid.lengths();
    let mut terms = Vec::new();
    for k1 in 0..=2u32 {
        for k2 in 0..=2u32 {
            for k3 in 0..=2u32 {
                for m in 0..=2u32 {
                    if k1 + k2 + k3 + m == 0 {
                        continue;
                    }
                    let c: f64 = rng.gen_range(-1.0..1.0);
                    let phase: [f64; 3] = [
                        rng.gen_range(0.0..2.0 * PI),
                        rng.gen_range(0.0..2.0 * PI),
                        rng.gen_range(0.0..2.0 * PI),
                    ];
                    terms.push((c, [k1, k2, k3], m, phase));
                }
            }
        }
    }
    let raw = ScalarField::from_fn(grid, |x| {
        terms
            .iter()
            .map(|(c, k, m, ph)| {
                let mut v = c * (*m as f64 * PI * x[3]).cos();
                for i in 0..3 {
                    v *= (2.0 * PI * k[i] as f64 * x[i] / l[i] + ph[i]).cos();
                }
                v
            })
            .sum()
    });
    let scale = raw.max_abs();
    if scale == 0.0 {
        return raw;
    }
    raw.map(|v| amp * v / scale)
}

const SYNTHETIC_SECTIONS: &[(&str, &[&str])] = &[(
    "fields",
    &[
        "scalar_curvature",
        "q0",
        "mean_curvature",
        "t0",
        "normal_curvature",
        "volume_weight",
        "area_weight",
        "ricci_11",
        "ricci_12",
        "ricci_13",
        "ricci_14",
        "ricci_22",
        "ricci_23",
        "ricci_24",
        "ricci_33",
        "ricci_34",
        "ricci_44",
        "l_11",
        "l_12",
        "l_13",
        "l_22",
        "l_23",
        "l_33",
    ],
)];

/// Loads a synthetic background description: a `[fields]` section whose
/// values are constants or `file:<snapshot>` references. Omitted fields are
/// those of the flat background.
pub fn load_synthetic(path: &Path, grid: Grid) -> Result<BackgroundGeometry> {
    let text =
        std::fs::read_to_string(path).map_err(|e| err(path, 0, format!("cannot read: {e}")))?;
    let ini = parse_ini(&text, path, SYNTHETIC_SECTIONS)?;
    let mut f = SyntheticFields::zeros(grid);

    let volume = |key: &str, default: &ScalarField| -> Result<ScalarField> {
        match ini.get("fields", key) {
            None => Ok(default.clone()),
            Some((v, line)) => {
                if let Some(rest) = v.strip_prefix("file:") {
                    match read_snapshot_file(&ini.resolve(rest.trim()), grid)? {
                        Snapshot::Volume(s) => Ok(s),
                        Snapshot::Boundary(_) => {
                            Err(err(path, line, format!("{key} must be a volume field")))
                        }
                    }
                } else {
                    let c = v.parse::<f64>().map_err(|_| {
                        err(
                            path,
                            line,
                            format!("{key}: expected a number or file:<path>"),
                        )
                    })?;
                    Ok(ScalarField::constant(grid, c))
                }
            }
        }
    };
    let boundary = |key: &str, default: &BoundaryField| -> Result<BoundaryField> {
        match ini.get("fields", key) {
            None => Ok(default.clone()),
            Some((v, line)) => {
                if let Some(rest) = v.strip_prefix("file:") {
                    match read_snapshot_file(&ini.resolve(rest.trim()), grid)? {
                        Snapshot::Boundary(b) if b.face() == Face::Both => Ok(b),
                        _ => Err(err(
                            path,
                            line,
                            format!("{key} must be a boundary field on both faces"),
                        )),
                    }
                } else {
                    let c = v.parse::<f64>().map_err(|_| {
                        err(
                            path,
                            line,
                            format!("{key}: expected a number or file:<path>"),
                        )
                    })?;
                    Ok(BoundaryField::constant(grid, Face::Both, c))
                }
            }
        }
    };

    f.scalar_curvature = volume("scalar_curvature", &f.scalar_curvature)?;
    f.q0 = volume("q0", &f.q0)?;
    f.volume_weight = volume("volume_weight", &f.volume_weight)?;
    f.mean_curvature = boundary("mean_curvature", &f.mean_curvature)?;
    f.t0 = boundary("t0", &f.t0)?;
    f.normal_curvature = boundary("normal_curvature", &f.normal_curvature)?;
    f.area_weight = boundary("area_weight", &f.area_weight)?;
    let zero_v = ScalarField::zeros(grid);
    for a in 0..4 {
        for b in a..4 {
            let field = volume(&format!("ricci_{}{}", a + 1, b + 1), &zero_v)?;
            for (p, &val) in field.values().iter().enumerate() {
                f.ricci[p][a][b] = val;
                f.ricci[p][b][a] = val;
            }
        }
    }
    let zero_b = BoundaryField::zeros(grid, Face::Both);
    for a in 0..3 {
        for b in a..3 {
            let field = boundary(&format!("l_{}{}", a + 1, b + 1), &zero_b)?;
            for (p, &val) in field.values().iter().enumerate() {
                f.second_fundamental[p][a][b] = val;
                f.second_fundamental[p][b][a] = val;
            }
        }
    }
    BackgroundGeometry::synthetic(grid, f)
}
