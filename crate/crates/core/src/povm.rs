//! Measurement catalogs: mode-sorting projectors, interleaved pairs,
//! parity sorting, direct-imaging pixels, 2D product families, and
//! photon-number-dressed variants for strong sources.
//!
//! Outcomes are represented in the low-order mode / photon subspace;
//! whatever is not covered by the named outcomes is lumped into one
//! bucket outcome so probabilities always sum to one.

use std::sync::Arc;

use crate::basis::{Basis2D, DerivativeBasis};
use crate::error::{Error, Result};

/// Mode index into a [`DerivativeBasis`] (1D) or [`Basis2D`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeRef {
    One(usize),
    Two(usize, usize),
}

/// Photon-number dressing of an outcome with the fundamental PSF mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dressing {
    /// Bare outcome (single-photon for projectors).
    None,
    /// Summed over all dressing photon counts (a PVM element).
    Summed,
    /// Resolved at exactly `k` dressing photons.
    PerCount(usize),
}

#[derive(Debug, Clone)]
pub enum OutcomeOp {
    /// Projector onto `sum_i c_i b^(mode_i)`, a unit vector.
    ModeProjector { coeffs: Vec<(ModeRef, f64)> },
    /// Parity sector `(I + sx P_x)/2` (times `(I + sy P_y)/2` in 2D).
    ParitySector { sx: i8, sy: Option<i8> },
    /// Position bin `[lo, hi)` (1D direct imaging).
    Pixel { lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub label: String,
    pub op: OutcomeOp,
    pub dressing: Dressing,
}

/// Measurement frame: the basis (and through it the PSF, grid, and
/// centroid reference) the outcomes are defined against.
#[derive(Debug, Clone)]
pub enum PovmContext {
    OneD(Arc<DerivativeBasis>),
    TwoD(Arc<Basis2D>),
}

#[derive(Debug, Clone)]
pub struct Povm {
    pub label: String,
    pub outcomes: Vec<Outcome>,
    pub context: PovmContext,
}

impl Povm {
    pub fn basis_1d(&self) -> Result<&Arc<DerivativeBasis>> {
        match &self.context {
            PovmContext::OneD(b) => Ok(b),
            PovmContext::TwoD(_) => Err(Error::InvalidInput("expected a 1D measurement".into())),
        }
    }

    pub fn basis_2d(&self) -> Result<&Arc<Basis2D>> {
        match &self.context {
            PovmContext::TwoD(b) => Ok(b),
            PovmContext::OneD(_) => Err(Error::InvalidInput("expected a 2D measurement".into())),
        }
    }

    pub fn dimension(&self) -> u8 {
        match self.context {
            PovmContext::OneD(_) => 1,
            PovmContext::TwoD(_) => 2,
        }
    }
}

fn projector_1d(label: impl Into<String>, coeffs: Vec<(usize, f64)>) -> Outcome {
    let norm: f64 = coeffs.iter().map(|c| c.1 * c.1).sum::<f64>().sqrt();
    Outcome {
        label: label.into(),
        op: OutcomeOp::ModeProjector {
            coeffs: coeffs
                .into_iter()
                .map(|(l, c)| (ModeRef::One(l), c / norm))
                .collect(),
        },
        dressing: Dressing::None,
    }
}

fn projector_2d(label: impl Into<String>, coeffs: Vec<((usize, usize), f64)>) -> Outcome {
    let norm: f64 = coeffs.iter().map(|c| c.1 * c.1).sum::<f64>().sqrt();
    Outcome {
        label: label.into(),
        op: OutcomeOp::ModeProjector {
            coeffs: coeffs
                .into_iter()
                .map(|((k, l), c)| (ModeRef::Two(k, l), c / norm))
                .collect(),
        },
        dressing: Dressing::None,
    }
}

/// Projectors onto the derivative modes `b^(0..lmax)` (the weak-source
/// optimal basis for even moments).
pub fn spade_povm(basis: &Arc<DerivativeBasis>, lmax: usize) -> Result<Povm> {
    if lmax > basis.lmax() {
        return Err(Error::OrderTooHigh {
            order: lmax,
            lmax: basis.lmax(),
        });
    }
    let outcomes = (0..=lmax)
        .map(|l| projector_1d(format!("b{l}"), vec![(l, 1.0)]))
        .collect();
    Ok(Povm {
        label: "spade".into(),
        outcomes,
        context: PovmContext::OneD(Arc::clone(basis)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Interleaved pairs `(b^(l) +/- b^(l+1)) / sqrt2` over `l` of one
/// parity; the two parities together cover all adjacent pairs without
/// overlap. The `l = 0` even pair is the centroid-scheme measurement.
pub fn interleaved_povm(basis: &Arc<DerivativeBasis>, parity: Parity) -> Result<Povm> {
    interleaved_povm_rotated(basis, parity, std::f64::consts::FRAC_PI_4)
}

/// Interleaved pairs at an arbitrary real mixing angle:
/// `cos(t) b^(l) + sin(t) b^(l+1)` and its orthogonal complement. The
/// odd-moment information survives for any `t` away from {0, pi/2};
/// `t = pi/4` is the balanced choice used everywhere else.
pub fn interleaved_povm_rotated(
    basis: &Arc<DerivativeBasis>,
    parity: Parity,
    angle: f64,
) -> Result<Povm> {
    if basis.lmax() < 1 {
        return Err(Error::OrderTooHigh {
            order: 1,
            lmax: basis.lmax(),
        });
    }
    let (c, s) = (angle.cos(), angle.sin());
    let start = match parity {
        Parity::Even => 0,
        Parity::Odd => 1,
    };
    let mut outcomes = Vec::new();
    let mut l = start;
    while l < basis.lmax() {
        outcomes.push(projector_1d(
            format!("b{l}+b{}", l + 1),
            vec![(l, c), (l + 1, s)],
        ));
        outcomes.push(projector_1d(
            format!("b{l}-b{}", l + 1),
            vec![(l, -s), (l + 1, c)],
        ));
        l += 2;
    }
    Ok(Povm {
        label: match parity {
            Parity::Even => "interleaved-even".into(),
            Parity::Odd => "interleaved-odd".into(),
        },
        outcomes,
        context: PovmContext::OneD(Arc::clone(basis)),
    })
}

/// Parity sorting `{(I - P)/2, (I + P)/2}` about the basis center.
pub fn sliver_povm(basis: &Arc<DerivativeBasis>) -> Result<Povm> {
    let grid = basis.psf().grid();
    grid.require_symmetric()?;
    if (basis.center() - grid.center()).abs() > 1e-12 {
        return Err(Error::AsymmetricGrid(basis.center()));
    }
    let outcomes = vec![
        Outcome {
            label: "antisym".into(),
            op: OutcomeOp::ParitySector { sx: -1, sy: None },
            dressing: Dressing::None,
        },
        Outcome {
            label: "sym".into(),
            op: OutcomeOp::ParitySector { sx: 1, sy: None },
            dressing: Dressing::None,
        },
    ];
    Ok(Povm {
        label: "sliver".into(),
        outcomes,
        context: PovmContext::OneD(Arc::clone(basis)),
    })
}

/// Four parity sectors `(I +/- P1)(I +/- P2)/4` for 2D.
pub fn sliver_povm_2d(basis: &Arc<Basis2D>) -> Result<Povm> {
    basis.bx.psf().grid().require_symmetric()?;
    basis.by.psf().grid().require_symmetric()?;
    let mut outcomes = Vec::new();
    for sx in [-1i8, 1] {
        for sy in [-1i8, 1] {
            outcomes.push(Outcome {
                label: format!(
                    "{}{}",
                    if sx < 0 { "anti" } else { "sym" },
                    if sy < 0 { "-anti" } else { "-sym" }
                ),
                op: OutcomeOp::ParitySector { sx, sy: Some(sy) },
                dressing: Dressing::None,
            });
        }
    }
    Ok(Povm {
        label: "sliver-2d".into(),
        outcomes,
        context: PovmContext::TwoD(Arc::clone(basis)),
    })
}

/// Pixel bins of width `pixel_width` tiling the grid extent.
pub fn direct_imaging_povm(basis: &Arc<DerivativeBasis>, pixel_width: f64) -> Result<Povm> {
    let grid = basis.psf().grid();
    let spacing = grid.spacing();
    if pixel_width < spacing {
        return Err(Error::PixelTooSmall {
            width: pixel_width,
            spacing,
        });
    }
    let lo = grid.nodes()[0];
    let hi = grid.nodes()[grid.len() - 1];
    // tile so one pixel is centered on the measurement frame
    let center = basis.center();
    let n_left = ((center - pixel_width / 2.0 - lo) / pixel_width).ceil() as i64;
    let start = center - pixel_width / 2.0 - n_left as f64 * pixel_width;
    let n = ((hi - start) / pixel_width).ceil() as usize;
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        let a = start + i as f64 * pixel_width;
        let b = if i + 1 == n {
            hi + spacing // include the final node
        } else {
            start + (i + 1) as f64 * pixel_width
        };
        outcomes.push(Outcome {
            label: format!("pix{i}"),
            op: OutcomeOp::Pixel { lo: a, hi: b },
            dressing: Dressing::None,
        });
    }
    Ok(Povm {
        label: format!("direct:{pixel_width}"),
        outcomes,
        context: PovmContext::OneD(Arc::clone(basis)),
    })
}

/// Dressing mode for [`dressed_povm`].
#[derive(Debug, Clone, Copy)]
pub enum DressingMode {
    Summed,
    PerPhotonCount(usize),
}

/// Dresses every outcome with `k` extra photons in the fundamental PSF
/// mode, either summed over `k` or resolved per count. Pixel outcomes
/// have no mode-algebra representation and projectors overlapping the
/// fundamental mode dress into improperly normalized operators; both are
/// rejected. The pure-PSF photon tower stays in the bucket, where it
/// carries no moment information.
pub fn dressed_povm(base: &Povm, mode: DressingMode) -> Result<Povm> {
    let mut outcomes = Vec::new();
    for o in &base.outcomes {
        if matches!(o.op, OutcomeOp::Pixel { .. }) {
            return Err(Error::UnsupportedBase(format!(
                "pixel outcome `{}` cannot be photon-number dressed",
                o.label
            )));
        }
        if let OutcomeOp::ModeProjector { coeffs } = &o.op {
            let c0 = coeffs
                .iter()
                .filter(|(m, _)| matches!(m, ModeRef::One(0) | ModeRef::Two(0, 0)))
                .map(|(_, c)| c.abs())
                .fold(0.0f64, f64::max);
            if c0 > 1e-12 {
                return Err(Error::UnsupportedBase(format!(
                    "outcome `{}` overlaps the fundamental mode; dress only orthogonal projectors",
                    o.label
                )));
            }
        }
        match mode {
            DressingMode::Summed => outcomes.push(Outcome {
                label: format!("{}*", o.label),
                op: o.op.clone(),
                dressing: Dressing::Summed,
            }),
            DressingMode::PerPhotonCount(kmax) => {
                for k in 0..=kmax {
                    outcomes.push(Outcome {
                        label: format!("{}:k{k}", o.label),
                        op: o.op.clone(),
                        dressing: Dressing::PerCount(k),
                    });
                }
            }
        }
    }
    Ok(Povm {
        label: format!("dressed:{}", base.label),
        outcomes,
        context: base.context.clone(),
    })
}

/// The seven 2D product-mode families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table2dFamily {
    B0w,
    B1w,
    B2w,
    B3w,
    B4w,
    B5w,
    B6w,
}

impl Table2dFamily {
    pub fn parse(s: &str) -> Option<Table2dFamily> {
        match s.to_ascii_lowercase().as_str() {
            "b0w" => Some(Self::B0w),
            "b1w" => Some(Self::B1w),
            "b2w" => Some(Self::B2w),
            "b3w" => Some(Self::B3w),
            "b4w" => Some(Self::B4w),
            "b5w" => Some(Self::B5w),
            "b6w" => Some(Self::B6w),
            _ => None,
        }
    }
}

/// Builds one of the 2D families over total degree `K <= kmax`.
///
/// `B0w` projects onto each product mode. `B1w`/`B2w` pair modes within
/// one total degree (`(L,K-L)` with `(L+1,K-L-1)`, `L` even/odd);
/// `B3w`-`B6w` pair across adjacent total degrees to reach moments with
/// mixed parity on the two axes.
pub fn table2d_povm(basis: &Arc<Basis2D>, family: Table2dFamily, kmax: usize) -> Result<Povm> {
    let (lx, ly) = basis.lmax();
    let check = |k: usize, l: usize| -> Result<()> {
        if k > lx || l > ly {
            return Err(Error::OrderTooHigh {
                order: k.max(l),
                lmax: lx.min(ly),
            });
        }
        Ok(())
    };
    let mut outcomes = Vec::new();
    let mut pair = |a: (usize, usize), b: (usize, usize)| -> Result<()> {
        check(a.0, a.1)?;
        check(b.0, b.1)?;
        outcomes.push(projector_2d(
            format!("b{}{}+b{}{}", a.0, a.1, b.0, b.1),
            vec![(a, 1.0), (b, 1.0)],
        ));
        outcomes.push(projector_2d(
            format!("b{}{}-b{}{}", a.0, a.1, b.0, b.1),
            vec![(a, 1.0), (b, -1.0)],
        ));
        Ok(())
    };
    match family {
        Table2dFamily::B0w => {
            for k in 0..=kmax {
                for l in 0..=k {
                    check(l, k - l)?;
                    outcomes.push(projector_2d(
                        format!("b{}{}", l, k - l),
                        vec![((l, k - l), 1.0)],
                    ));
                }
            }
        }
        Table2dFamily::B1w | Table2dFamily::B2w => {
            let want_even = family == Table2dFamily::B1w;
            for k in 1..=kmax {
                for l in 0..k {
                    if (l % 2 == 0) == want_even {
                        pair((l, k - l), (l + 1, k - l - 1))?;
                    }
                }
            }
        }
        Table2dFamily::B3w | Table2dFamily::B4w => {
            let want_even = family == Table2dFamily::B3w;
            for k in 0..=kmax {
                for l in 0..=k {
                    if (l % 2 == 0) == want_even {
                        pair((l, k - l), (l + 1, k - l))?;
                    }
                }
            }
        }
        Table2dFamily::B5w | Table2dFamily::B6w => {
            let want_even = family == Table2dFamily::B5w;
            for k in 0..=kmax {
                for l in 0..=k {
                    if (l % 2 == 0) == want_even {
                        pair((k - l, l), (k - l, l + 1))?;
                    }
                }
            }
        }
    }
    Ok(Povm {
        label: format!("{family:?}").to_lowercase(),
        outcomes,
        context: PovmContext::TwoD(Arc::clone(basis)),
    })
}
