//! Learned controller for `M > n + 1` demonstrations: one affine basis per Delaunay simplex of
//! the initial states, selected at each interval start.

use nalgebra::{DMatrix, DVector};

use crate::demos::DemonstrationSet;
use crate::error::{Error, Result};
use crate::geometry::{self, Triangulation};
use crate::learner::{build_basis, AffineBasis, Anchor, ControllerFile, FeedbackMode, IntervalPolicy};

#[derive(Debug, Clone)]
pub struct MultiController {
    pub tri: Triangulation,
    pub bases: Vec<AffineBasis>,
    pub feedback: FeedbackMode,
    pub period: f64,
}

/// Simplex chosen for an interval and the affine coordinates of the anchoring state.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub simplex: usize,
    pub indices: Vec<usize>,
    pub theta: DVector<f64>,
    /// Projection onto the hull when the state lies outside it.
    pub projected: Option<DVector<f64>>,
}

impl MultiController {
    /// Delaunay triangulation of `Z(0)` with one basis per simplex; `T` is the demonstration
    /// length.
    pub fn from_set(set: &DemonstrationSet, feedback: FeedbackMode) -> Result<Self> {
        let tri = geometry::delaunay(&set.initial_states())?;
        Self::with_triangulation(set, tri, feedback)
    }

    /// Uses a given triangulation of the initial states.
    pub fn with_triangulation(
        set: &DemonstrationSet,
        tri: Triangulation,
        feedback: FeedbackMode,
    ) -> Result<Self> {
        if tri.points != set.initial_states() {
            return Err(Error::InvalidArgument(
                "triangulation is not built on the demonstrations' initial states".into(),
            ));
        }
        let bases = tri
            .simplices
            .iter()
            .map(|s| build_basis(set, &s.vertex_indices))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(tri, bases, feedback, set.horizon)
    }

    pub fn from_parts(
        tri: Triangulation,
        bases: Vec<AffineBasis>,
        feedback: FeedbackMode,
        period: f64,
    ) -> Result<Self> {
        if bases.is_empty() || bases.len() != tri.simplices.len() {
            return Err(Error::InvalidArgument(format!(
                "{} bases for {} simplices",
                bases.len(),
                tri.simplices.len()
            )));
        }
        let horizon = bases.iter().map(|b| b.horizon).fold(f64::INFINITY, f64::min);
        if !(period > 0.0) || period > horizon * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "period {period} must lie in (0, {horizon}]"
            )));
        }
        Ok(Self {
            tri,
            bases,
            feedback,
            period,
        })
    }

    pub fn with_period(&self, period: f64) -> Result<Self> {
        Self::from_parts(self.tri.clone(), self.bases.clone(), self.feedback, period)
    }

    /// Containing simplex of `z(pT)`; outside the hull, the simplex of its projection with
    /// the affine extension of the barycentric coordinates.
    pub fn select_index_set(&self, z_pt: &DVector<f64>) -> Result<Selection> {
        let (simplex, projected) = match self.tri.locate(z_pt) {
            Some(s) => (s, None),
            None => {
                let proj = geometry::project_to_hull(&self.tri.points, z_pt)?;
                let s = self.tri.locate(&proj.point).ok_or_else(|| {
                    Error::Degenerate("projection onto the hull is not covered by a simplex".into())
                })?;
                (s, Some(proj.point))
            }
        };
        Ok(Selection {
            simplex,
            indices: self.tri.simplices[simplex].vertex_indices.clone(),
            theta: self.tri.barycentric_in(simplex, z_pt)?,
            projected,
        })
    }

    /// `Psi_j(T) = Z_j(T) Z_j^{-1}(0)` for every simplex.
    pub fn per_simplex_monodromy(&self) -> Result<Vec<DMatrix<f64>>> {
        self.bases
            .iter()
            .map(|b| crate::certify::monodromy_from_data(b, self.period))
            .collect()
    }

    /// One control evaluation with the index set chosen from `z_pt`.
    pub fn control_multi(&self, t: f64, z_pt: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.control_at(t, z_pt, z)
    }

    pub fn to_file(&self) -> ControllerFile {
        ControllerFile::Multi {
            feedback: self.feedback,
            period: self.period,
            grid: self.bases[0].times.clone(),
            triangulation: self.tri.to_file(),
            bases: self.bases.iter().map(AffineBasis::to_record).collect(),
        }
    }
}

impl IntervalPolicy for MultiController {
    fn state_dim(&self) -> usize {
        self.bases[0].state_dim()
    }

    fn input_dim(&self) -> usize {
        self.bases[0].input_dim()
    }

    fn period(&self) -> f64 {
        self.period
    }

    fn anchor(&self, z_pt: &DVector<f64>) -> Result<Anchor> {
        let sel = self.select_index_set(z_pt)?;
        Ok(Anchor {
            basis: sel.simplex,
            z_start: z_pt.clone(),
            zeta: self.bases[sel.simplex].zeta(0.0, z_pt)?,
        })
    }

    fn control(&self, anchor: &Anchor, tau: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        let basis = self
            .bases
            .get(anchor.basis)
            .ok_or_else(|| Error::InvalidArgument(format!("no basis {}", anchor.basis)))?;
        match self.feedback {
            FeedbackMode::ClosedLoop => basis.control(tau, z),
            FeedbackMode::OpenLoop => basis.replay(tau, &anchor.zeta),
        }
    }
}
