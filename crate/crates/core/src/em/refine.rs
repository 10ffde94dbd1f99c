use serde::{Deserialize, Serialize};

use super::geometry::CrossSection;
use super::solver::{solve_cross_section, FieldSolution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Upper bound on elements per strip.
    pub max_discretization: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_discretization: 2048,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefinedSolution {
    pub solution: FieldSolution,
    /// Number of doublings applied to the starting discretization.
    pub level: usize,
    pub elements_per_strip: usize,
    /// Solves performed.
    pub iterations: usize,
    /// Relative energy change over the last doubling; `None` when the input
    /// was already at the maximum discretization.
    pub estimated_rel_error: Option<f64>,
    /// (elements per strip, energy per length) for every solve.
    pub history: Vec<(usize, f64)>,
}

/// Doubles the discretization until the energy per length changes by less
/// than `rel_tol` between successive levels.
pub fn refine_until_converged(geom: &CrossSection, rel_tol: f64) -> Result<RefinedSolution> {
    refine_with(geom, rel_tol, RefineOptions::default())
}

pub fn refine_with(
    geom: &CrossSection,
    rel_tol: f64,
    options: RefineOptions,
) -> Result<RefinedSolution> {
    if !(rel_tol > 0.0 && rel_tol <= 0.1) {
        return Err(Error::invalid(format!(
            "rel_tol {rel_tol} outside (0, 0.1]"
        )));
    }
    let mut current = geom.clone();
    let mut solution = solve_cross_section(&current)?;
    let mut history = vec![(current.discretization, solution.energy_per_len)];

    if current.discretization >= options.max_discretization {
        return Ok(RefinedSolution {
            elements_per_strip: current.discretization,
            solution,
            level: 0,
            iterations: 1,
            estimated_rel_error: None,
            history,
        });
    }

    let mut level = 0;
    loop {
        let next_n = current.discretization * 2;
        if next_n > options.max_discretization {
            let (_, previous) = history[history.len() - 2];
            return Err(Error::Convergence {
                elements_per_strip: current.discretization,
                previous,
                last: solution.energy_per_len,
            });
        }
        current = current.with_discretization(next_n);
        let finer = solve_cross_section(&current)?;
        level += 1;
        let change = (finer.energy_per_len - solution.energy_per_len).abs() / finer.energy_per_len;
        history.push((next_n, finer.energy_per_len));
        solution = finer;
        if change < rel_tol {
            return Ok(RefinedSolution {
                elements_per_strip: next_n,
                solution,
                level,
                iterations: history.len(),
                estimated_rel_error: Some(change),
                history,
            });
        }
    }
}
