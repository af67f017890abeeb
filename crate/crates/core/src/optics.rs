//! Jones-calculus elements and the bench compiler.
//!
//! Conventions (all fixed, tomography depends on them):
//! - HWP with fast axis at θ: `[[cos2θ, sin2θ], [sin2θ, -cos2θ]]`.
//! - QWP with fast axis at θ:
//!   `e^{iπ/4} [[cos²θ + i sin²θ, (1-i) sinθ cosθ], [(1-i) sinθ cosθ, sin²θ + i cos²θ]]`.
//! - PBS with ports `[a, b, c, d]`: H transmits `a↔c`, `b↔d`; V reflects
//!   `a↔d`, `b↔c` and picks up a factor `i`.
//! - PHASE on one port: `diag(1, e^{iφ})`, a birefringent retarder.
//! - POLARIZER at θ on port `p`: the component along θ stays in `p`, the
//!   orthogonal component is swapped into a dedicated loss port.
//! - MIRROR with ports `[a, b]`: moves light between `a` and `b` with `diag(1, -1)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, Mat2, C64, I, ONE, ZERO};
use crate::state::{Labeling, ModeSpace, ModeUnitary, Pol, Port, UnitaryKind};

pub const PRESET_NAMES: [&str; 2] = ["fig2_polarization", "fig2_path"];
const LOSS_PREFIX: &str = "LOSS.";

pub fn hwp_matrix(angle: f64) -> Mat2 {
    let (s, co) = (2.0 * angle).sin_cos();
    Mat2::new(c(co, 0.0), c(s, 0.0), c(s, 0.0), c(-co, 0.0))
}

pub fn qwp_matrix(angle: f64) -> Mat2 {
    let (s, co) = angle.sin_cos();
    let global = C64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
    let off = c(1.0, -1.0) * (s * co);
    Mat2::new(
        c(co * co, s * s),
        off,
        off,
        c(s * s, co * co),
    )
    .map(|z| z * global)
}

pub fn phase_matrix(phase: f64) -> Mat2 {
    Mat2::new(ONE, ZERO, ZERO, C64::from_polar(1.0, phase))
}

/// Orthogonal projector onto linear polarization at `angle`.
pub fn linear_projector(angle: f64) -> Mat2 {
    let (s, co) = angle.sin_cos();
    Mat2::new(c(co * co, 0.0), c(s * co, 0.0), c(s * co, 0.0), c(s * s, 0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ElementKind {
    Hwp,
    Qwp,
    Pbs,
    Phase,
    Polarizer,
    Mirror,
}

impl ElementKind {
    fn port_count(self) -> usize {
        match self {
            ElementKind::Hwp | ElementKind::Qwp | ElementKind::Phase | ElementKind::Polarizer => 1,
            ElementKind::Mirror => 2,
            ElementKind::Pbs => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: Option<String>,
    pub kind: ElementKind,
    pub ports: Vec<Port>,
    /// Radians.
    pub angle: f64,
    /// Radians.
    pub phase: f64,
}

impl Element {
    pub fn new(kind: ElementKind, ports: Vec<Port>) -> Self {
        Element {
            name: None,
            kind,
            ports,
            angle: 0.0,
            phase: 0.0,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_angle_deg(mut self, deg: f64) -> Self {
        self.angle = deg.to_radians();
        self
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub port: Port,
    /// Radians; `None` means polarization-blind.
    pub polarizer: Option<f64>,
}

/// Tunable wave-plate pair in front of a detector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerSlot {
    pub detector: String,
    pub qwp: String,
    pub hwp: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bench {
    pub name: Option<String>,
    pub description: Option<String>,
    /// Which labeling the analyzers measure; qubit `k` is read by `analyzers[k]`.
    pub labeling: Option<Labeling>,
    pub ports: Vec<Port>,
    pub elements: Vec<Element>,
    pub detectors: BTreeMap<String, Detector>,
    pub analyzers: Vec<AnalyzerSlot>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    kind: ElementKind,
    ports: Vec<Port>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase_rad: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorSpec {
    port: Port,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarizer_deg: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labeling: Option<Labeling>,
    ports: Vec<Port>,
    elements: Vec<ElementSpec>,
    detector_map: BTreeMap<String, DetectorSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    analyzers: Vec<AnalyzerSlot>,
}

/// Port list of a bench including generated loss ports, with index lookup.
#[derive(Clone, Debug)]
pub struct PortSpace {
    ports: Vec<Port>,
    index: BTreeMap<Port, usize>,
    loss_ports: Vec<Port>,
}

impl PortSpace {
    pub fn ports(&self) -> &[Port] {
        &self.ports
    }

    pub fn loss_ports(&self) -> &[Port] {
        &self.loss_ports
    }

    pub fn index(&self, port: &Port) -> Result<usize> {
        self.index
            .get(port)
            .copied()
            .ok_or_else(|| Error::Config(format!("port {port} is not declared")))
    }

    /// Row/column index of `(port, pol)` in port matrices.
    pub fn slot(&self, port: &Port, pol: Pol) -> Result<usize> {
        Ok(2 * self.index(port)? + pol.index())
    }

    pub fn dim(&self) -> usize {
        2 * self.ports.len()
    }
}

impl Bench {
    pub fn new(
        ports: Vec<Port>,
        elements: Vec<Element>,
        detectors: BTreeMap<String, Detector>,
    ) -> Result<Self> {
        let bench = Bench {
            name: None,
            description: None,
            labeling: None,
            ports,
            elements,
            detectors,
            analyzers: Vec::new(),
        };
        bench.validate()?;
        Ok(bench)
    }

    pub fn empty(ports: Vec<Port>) -> Result<Self> {
        Bench::new(ports, Vec::new(), BTreeMap::new())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "fig2_polarization" => include_str!("../presets/fig2_polarization.json"),
            "fig2_path" => include_str!("../presets/fig2_path.json"),
            other => {
                return Err(Error::Config(format!(
                    "unknown bench preset '{other}' (known: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Bench::from_json(text)
    }

    /// Loads a preset by name, or a bench file when `name` ends in `.json`.
    pub fn load(name: &str) -> Result<Self> {
        if name.ends_with(".json") {
            Bench::from_json(&std::fs::read_to_string(name)?)
        } else {
            Bench::preset(name)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BenchFile = serde_json::from_str(text)?;
        let elements = file
            .elements
            .into_iter()
            .map(|e| Element {
                name: e.name,
                kind: e.kind,
                ports: e.ports,
                angle: e.angle_deg.unwrap_or(0.0).to_radians(),
                phase: e.phase_rad.unwrap_or(0.0),
            })
            .collect();
        let detectors = file
            .detector_map
            .into_iter()
            .map(|(id, d)| {
                (
                    id,
                    Detector {
                        port: d.port,
                        polarizer: d.polarizer_deg.map(f64::to_radians),
                    },
                )
            })
            .collect();
        let bench = Bench {
            name: file.name,
            description: file.description,
            labeling: file.labeling,
            ports: file.ports,
            elements,
            detectors,
            analyzers: file.analyzers,
        };
        bench.validate()?;
        Ok(bench)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BenchFile {
            name: self.name.clone(),
            description: self.description.clone(),
            labeling: self.labeling,
            ports: self.ports.clone(),
            elements: self
                .elements
                .iter()
                .map(|e| ElementSpec {
                    name: e.name.clone(),
                    kind: e.kind,
                    ports: e.ports.clone(),
                    angle_deg: matches!(
                        e.kind,
                        ElementKind::Hwp | ElementKind::Qwp | ElementKind::Polarizer
                    )
                    .then(|| e.angle.to_degrees()),
                    phase_rad: (e.kind == ElementKind::Phase).then_some(e.phase),
                })
                .collect(),
            detector_map: self
                .detectors
                .iter()
                .map(|(id, d)| {
                    (
                        id.clone(),
                        DetectorSpec {
                            port: d.port.clone(),
                            polarizer_deg: d.polarizer.map(f64::to_degrees),
                        },
                    )
                })
                .collect(),
            analyzers: self.analyzers.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.ports {
            if p.as_str().starts_with(LOSS_PREFIX) {
                return Err(Error::Config(format!("port name {p} uses the reserved {LOSS_PREFIX} prefix")));
            }
            if !seen.insert(p) {
                return Err(Error::Config(format!("port {p} declared twice")));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for (k, e) in self.elements.iter().enumerate() {
            let label = e.name.clone().unwrap_or_else(|| format!("#{k}"));
            if e.ports.len() != e.kind.port_count() {
                return Err(Error::Config(format!(
                    "element {label} ({:?}) needs {} port(s), got {}",
                    e.kind,
                    e.kind.port_count(),
                    e.ports.len()
                )));
            }
            let distinct: std::collections::BTreeSet<_> = e.ports.iter().collect();
            if distinct.len() != e.ports.len() {
                return Err(Error::Config(format!("element {label} repeats a port")));
            }
            for p in &e.ports {
                if !seen.contains(p) {
                    return Err(Error::Config(format!("element {label} references undeclared port {p}")));
                }
            }
            if let Some(n) = &e.name {
                if !names.insert(n.clone()) {
                    return Err(Error::Config(format!("element name {n} used twice")));
                }
            }
        }
        for (id, d) in &self.detectors {
            if !seen.contains(&d.port) {
                return Err(Error::Config(format!("detector {id} references undeclared port {}", d.port)));
            }
        }
        for slot in &self.analyzers {
            if !self.detectors.contains_key(&slot.detector) {
                return Err(Error::Config(format!("analyzer references unknown detector {}", slot.detector)));
            }
            let q = self.element_index(&slot.qwp)?;
            let h = self.element_index(&slot.hwp)?;
            if self.elements[q].kind != ElementKind::Qwp || self.elements[h].kind != ElementKind::Hwp {
                return Err(Error::Config(format!(
                    "analyzer {}/{} must name a QWP and an HWP",
                    slot.qwp, slot.hwp
                )));
            }
            if q >= h || self.elements[q].ports != self.elements[h].ports {
                return Err(Error::Config(format!(
                    "analyzer {} must precede {} on the same port",
                    slot.qwp, slot.hwp
                )));
            }
        }
        Ok(())
    }

    pub fn element_index(&self, name: &str) -> Result<usize> {
        self.elements
            .iter()
            .position(|e| e.name.as_deref() == Some(name))
            .ok_or_else(|| Error::Config(format!("no element named {name}")))
    }

    pub fn set_angle(&mut self, name: &str, radians: f64) -> Result<()> {
        let k = self.element_index(name)?;
        self.elements[k].angle = radians;
        Ok(())
    }

    pub fn set_phase(&mut self, name: &str, radians: f64) -> Result<()> {
        let k = self.element_index(name)?;
        self.elements[k].phase = radians;
        Ok(())
    }

    pub fn detector(&self, id: &str) -> Result<&Detector> {
        self.detectors
            .get(id)
            .ok_or_else(|| Error::Config(format!("detector {id} is not declared")))
    }

    fn polarizer_loss_port(&self, element: usize) -> Port {
        let e = &self.elements[element];
        Port::new(format!("{LOSS_PREFIX}{}", e.name.clone().unwrap_or_else(|| element.to_string())))
    }

    fn detector_loss_port(id: &str) -> Port {
        Port::new(format!("{LOSS_PREFIX}{id}"))
    }

    pub fn port_space(&self) -> PortSpace {
        let mut ports = self.ports.clone();
        let mut loss_ports = Vec::new();
        for (k, e) in self.elements.iter().enumerate() {
            if e.kind == ElementKind::Polarizer {
                loss_ports.push(self.polarizer_loss_port(k));
            }
        }
        for (id, d) in &self.detectors {
            if d.polarizer.is_some() {
                loss_ports.push(Self::detector_loss_port(id));
            }
        }
        ports.extend(loss_ports.iter().cloned());
        let index = ports.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        PortSpace {
            ports,
            index,
            loss_ports,
        }
    }

    fn element_matrix(&self, k: usize, space: &PortSpace) -> Result<DMatrix<C64>> {
        let e = &self.elements[k];
        let mut m = DMatrix::<C64>::identity(space.dim(), space.dim());
        let single = |m: &mut DMatrix<C64>, port: &Port, jones: &Mat2| -> Result<()> {
            let base = 2 * space.index(port)?;
            for r in 0..2 {
                for col in 0..2 {
                    m[(base + r, base + col)] = jones[(r, col)];
                }
            }
            Ok(())
        };
        match e.kind {
            ElementKind::Hwp => single(&mut m, &e.ports[0], &hwp_matrix(e.angle))?,
            ElementKind::Qwp => single(&mut m, &e.ports[0], &qwp_matrix(e.angle))?,
            ElementKind::Phase => single(&mut m, &e.ports[0], &phase_matrix(e.phase))?,
            ElementKind::Polarizer => {
                let loss = self.polarizer_loss_port(k);
                polarizer_block(&mut m, space.index(&e.ports[0])?, space.index(&loss)?, e.angle);
            }
            ElementKind::Pbs => {
                let idx = e
                    .ports
                    .iter()
                    .map(|p| space.index(p))
                    .collect::<Result<Vec<_>>>()?;
                let (a, b, cc, d) = (idx[0], idx[1], idx[2], idx[3]);
                for &p in &idx {
                    m[(2 * p, 2 * p)] = ZERO;
                    m[(2 * p + 1, 2 * p + 1)] = ZERO;
                }
                for (x, y) in [(a, cc), (b, d)] {
                    m[(2 * y, 2 * x)] = ONE;
                    m[(2 * x, 2 * y)] = ONE;
                }
                for (x, y) in [(a, d), (b, cc)] {
                    m[(2 * y + 1, 2 * x + 1)] = I;
                    m[(2 * x + 1, 2 * y + 1)] = I;
                }
            }
            ElementKind::Mirror => {
                let a = space.index(&e.ports[0])?;
                let b = space.index(&e.ports[1])?;
                for p in [a, b] {
                    m[(2 * p, 2 * p)] = ZERO;
                    m[(2 * p + 1, 2 * p + 1)] = ZERO;
                }
                for (x, y) in [(a, b), (b, a)] {
                    m[(2 * y, 2 * x)] = ONE;
                    m[(2 * y + 1, 2 * x + 1)] = -ONE;
                }
            }
        }
        Ok(m)
    }

    /// Product of element matrices `elements[range]` over `(port, pol)`.
    pub fn port_matrix(&self, range: std::ops::Range<usize>, space: &PortSpace) -> Result<DMatrix<C64>> {
        let mut total = DMatrix::<C64>::identity(space.dim(), space.dim());
        for k in range {
            total = self.element_matrix(k, space)? * total;
        }
        Ok(total)
    }

    /// Matrix of the detector-side polarizers (identity where none).
    pub fn detector_polarizer_matrix(&self, space: &PortSpace) -> Result<DMatrix<C64>> {
        let mut m = DMatrix::<C64>::identity(space.dim(), space.dim());
        for (id, d) in &self.detectors {
            if let Some(angle) = d.polarizer {
                let loss = Self::detector_loss_port(id);
                polarizer_block(&mut m, space.index(&d.port)?, space.index(&loss)?, angle);
            }
        }
        Ok(m)
    }

    /// Full `(port, pol)` transfer matrix including detector polarizers.
    pub fn transfer_matrix(&self, space: &PortSpace) -> Result<DMatrix<C64>> {
        Ok(self.detector_polarizer_matrix(space)? * self.port_matrix(0..self.elements.len(), space)?)
    }

    /// Propagates one photon in `(port, pol)` through `elements[range]`.
    pub fn propagate_single(
        &self,
        range: std::ops::Range<usize>,
        port: &Port,
        pol: Pol,
        include_detector_polarizers: bool,
    ) -> Result<DVector<C64>> {
        let space = self.port_space();
        let mut m = self.port_matrix(range, &space)?;
        if include_detector_polarizers {
            m = self.detector_polarizer_matrix(&space)? * m;
        }
        Ok(m.column(space.slot(port, pol)?).into_owned())
    }
}

fn polarizer_block(m: &mut DMatrix<C64>, port: usize, loss: usize, angle: f64) {
    let pass = linear_projector(angle);
    let block = Mat2::identity() - pass;
    let (p, l) = (2 * port, 2 * loss);
    for r in 0..2 {
        for col in 0..2 {
            m[(p + r, p + col)] = pass[(r, col)];
            m[(l + r, l + col)] = pass[(r, col)];
            m[(l + r, p + col)] = block[(r, col)];
            m[(p + r, l + col)] = block[(r, col)];
        }
    }
}

/// Compiles a bench to an internal-blind mode map with a two-dimensional
/// internal label.
pub fn compile(bench: &Bench) -> Result<ModeUnitary> {
    compile_with_internal(bench, 2)
}

pub fn compile_with_internal(bench: &Bench, internal_dim: usize) -> Result<ModeUnitary> {
    bench.validate()?;
    let space = bench.port_space();
    let transfer = bench.transfer_matrix(&space)?;
    let modes = Arc::new(ModeSpace::new(space.ports().iter().cloned(), internal_dim)?);
    let kind = if space.loss_ports().is_empty() {
        UnitaryKind::Unitary
    } else {
        UnitaryKind::IsometryWithLoss {
            loss_ports: space.loss_ports().to_vec(),
        }
    };
    ModeUnitary::from_port_polarization(modes, space.ports(), &transfer, kind).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("compiled bench is not unitary: {msg}")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Ket2;
    use crate::state::Mode;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (a - b).iter().all(|z| z.norm() < tol)
    }

    fn equal_up_to_phase(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        let (i, j) = (0..4)
            .map(|k| (k / 2, k % 2))
            .max_by(|x, y| b[*x].norm().total_cmp(&b[*y].norm()))
            .unwrap();
        let phase = a[(i, j)] / b[(i, j)];
        (phase.norm() - 1.0).abs() < tol && close(a, &b.map(|z| z * phase), tol)
    }

    #[test]
    fn hwp_at_45_swaps_h_and_v() {
        let m = hwp_matrix(45f64.to_radians());
        let h = Ket2::new(ONE, ZERO);
        let out = m * h;
        assert!(out[0].norm() < 1e-15);
        assert!((out[1] - ONE).norm() < 1e-15);
    }

    #[test]
    fn hwp_at_zero_and_22_5() {
        assert!(close(&hwp_matrix(0.0), &Mat2::new(ONE, ZERO, ZERO, -ONE), 1e-15));
        let h = c(FRAC_1_SQRT_2, 0.0);
        assert!(close(&hwp_matrix(22.5f64.to_radians()), &Mat2::new(h, h, h, -h), 1e-15));
    }

    #[test]
    fn qwp_at_zero_is_diagonal() {
        let m = qwp_matrix(0.0);
        assert!(m[(0, 1)].norm() < 1e-15 && m[(1, 0)].norm() < 1e-15);
        assert!((m[(0, 0)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn qwp_at_45_makes_h_circular() {
        // Evaluating the fixed convention gives (|H> - i|V>)/sqrt2 up to phase.
        let out = qwp_matrix(45f64.to_radians()) * Ket2::new(ONE, ZERO);
        let ratio = out[1] / out[0];
        assert!((ratio - c(0.0, -1.0)).norm() < 1e-14);
        assert!((out.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_qwps_make_an_hwp() {
        let q = qwp_matrix(45f64.to_radians());
        assert!(equal_up_to_phase(&(q * q), &hwp_matrix(45f64.to_radians()), 1e-14));
    }

    #[test]
    fn plates_are_unitary_and_periodic() {
        for deg in [-33.0, 0.0, 12.5, 45.0, 90.0, 171.0] {
            let t = f64::to_radians(deg);
            for m in [hwp_matrix(t), qwp_matrix(t)] {
                assert!(close(&(m.adjoint() * m), &Mat2::identity(), 1e-14));
            }
            assert!(close(&hwp_matrix(t), &hwp_matrix(t + std::f64::consts::PI), 1e-12));
            assert!(close(&qwp_matrix(t), &qwp_matrix(t + std::f64::consts::PI), 1e-12));
        }
    }

    #[test]
    fn empty_bench_compiles_to_identity() {
        let b = Bench::empty(vec![Port::signal(), Port::idler()]).unwrap();
        let u = compile(&b).unwrap();
        let n = u.matrix().nrows();
        assert!((u.matrix() - DMatrix::<C64>::identity(n, n)).norm() < 1e-15);
        assert_eq!(*u.kind(), UnitaryKind::Unitary);
    }

    #[test]
    fn polarizer_routes_rejected_light_to_loss() {
        let e = Element::new(ElementKind::Polarizer, vec![Port::signal()])
            .named("POL")
            .with_angle_deg(0.0);
        let b = Bench::new(vec![Port::signal()], vec![e], BTreeMap::new()).unwrap();
        let u = compile(&b).unwrap();
        assert!(matches!(u.kind(), UnitaryKind::IsometryWithLoss { .. }));
        let v_in = Mode::new("S", Pol::V, 0);
        let lost = u.entry(&Mode::new("LOSS.POL", Pol::V, 0), &v_in).unwrap();
        assert!((lost - ONE).norm() < 1e-15);
        let kept = u.entry(&Mode::new("S", Pol::V, 0), &v_in).unwrap();
        assert!(kept.norm() < 1e-15);
    }

    #[test]
    fn bench_validation_catches_port_errors() {
        let e = Element::new(ElementKind::Pbs, vec![Port::signal(), Port::idler()]);
        assert!(Bench::new(vec![Port::signal(), Port::idler()], vec![e], BTreeMap::new()).is_err());
        let e = Element::new(ElementKind::Hwp, vec![Port::new("Q")]);
        assert!(Bench::new(vec![Port::signal()], vec![e], BTreeMap::new()).is_err());
    }

    #[test]
    fn presets_load_and_round_trip() {
        for name in PRESET_NAMES {
            let b = Bench::preset(name).unwrap();
            let again = Bench::from_json(&b.to_json().unwrap()).unwrap();
            assert_eq!(again.elements.len(), b.elements.len());
            assert_eq!(again.analyzers, b.analyzers);
            for (x, y) in again.elements.iter().zip(&b.elements) {
                assert!((x.angle - y.angle).abs() < 1e-12);
            }
        }
        assert!(Bench::preset("nope").is_err());
    }

    #[test]
    fn polarization_preset_routes_idler_v_and_signal_h() {
        let b = Bench::preset("fig2_polarization").unwrap();
        let space = b.port_space();
        let n = b.elements.len();
        let iv = b.propagate_single(0..n, &Port::idler(), Pol::V, true).unwrap();
        let sh = b.propagate_single(0..n, &Port::signal(), Pol::H, true).unwrap();
        let on_port = |v: &DVector<C64>, port: &str| -> f64 {
            let k = space.index(&Port::new(port)).unwrap();
            v[2 * k].norm_sqr() + v[2 * k + 1].norm_sqr()
        };
        assert!((on_port(&iv, "O1") - 1.0).abs() < 1e-12);
        assert!((on_port(&sh, "O2") - 1.0).abs() < 1e-12);
        let ih = b.propagate_single(0..n, &Port::idler(), Pol::H, true).unwrap();
        let sv = b.propagate_single(0..n, &Port::signal(), Pol::V, true).unwrap();
        assert!(on_port(&ih, "O1") + on_port(&ih, "O2") < 1e-12);
        assert!(on_port(&sv, "O1") + on_port(&sv, "O2") < 1e-12);
    }

    #[test]
    fn path_preset_folds_both_paths_of_each_polarization() {
        let b = Bench::preset("fig2_path").unwrap();
        let space = b.port_space();
        let n = b.elements.len();
        let on = |port: &Port, pol: Pol, out: &str, out_pol: Pol| -> f64 {
            let v = b.propagate_single(0..n, port, pol, false).unwrap();
            v[space.slot(&Port::new(out), out_pol).unwrap()].norm_sqr()
        };
        // H photon: signal arrives as H, idler as V, both at the D2 port.
        assert!((on(&Port::signal(), Pol::H, "O2", Pol::H) - 1.0).abs() < 1e-12);
        assert!((on(&Port::idler(), Pol::H, "O2", Pol::V) - 1.0).abs() < 1e-12);
        // V photon: signal arrives as H, idler as V, both at the D1 port.
        assert!((on(&Port::signal(), Pol::V, "O1", Pol::H) - 1.0).abs() < 1e-12);
        assert!((on(&Port::idler(), Pol::V, "O1", Pol::V) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn presets_compile_unitary() {
        for name in PRESET_NAMES {
            let u = compile(&Bench::preset(name).unwrap()).unwrap();
            assert!(u.unitarity_defect() < 1e-10);
        }
    }
}
