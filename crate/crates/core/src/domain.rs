//! Node grid on the unit square and the quarter-circle region embedded in it.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Field;

/// Uniform node grid on `[0, 1]^2` with `n` intervals per side.
///
/// Nodes are `x_i = i / n`, `i = 0..=n`; the nodes `1..n-1` are the interior
/// of the square and carry the sine-transform coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid2D {
    n: usize,
}

impl Grid2D {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::param("grid", format!("need at least 8 intervals, got {n}")));
        }
        Ok(Grid2D { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    /// Shape of a node field, `(n + 1, n + 1)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.n + 1, self.n + 1)
    }

    pub fn zeros(&self) -> Field {
        Array2::zeros(self.shape())
    }

    /// Samples `f(x, y)` at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Array2::from_shape_fn(self.shape(), |(i, j)| f(self.coord(i), self.coord(j)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeClass {
    Interior,
    Boundary,
    Exterior,
}

/// Which built-in region a mask describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    /// `0.05 < x, y < 0.95`, `(x - 0.05)^2 + (y - 0.05)^2 < 0.81`.
    QuarterCircle,
    /// The whole open unit square.
    Square,
}

/// `true` when `(x, y)` lies strictly inside the quarter-circle region.
pub fn in_quarter_circle(x: f64, y: f64) -> bool {
    let (dx, dy) = (x - 0.05, y - 0.05);
    x > 0.05 && x < 0.95 && y > 0.05 && y < 0.95 && dx * dx + dy * dy < 0.81
}

/// Per-node classification of the grid.
///
/// Interior nodes carry unknowns; boundary nodes hold the homogeneous
/// Dirichlet value; exterior nodes are outside the region.
#[derive(Clone, Debug)]
pub struct DomainMask {
    grid: Grid2D,
    kind: DomainKind,
    classes: Array2<NodeClass>,
    interior_count: usize,
}

impl DomainMask {
    pub fn build(grid: Grid2D, kind: DomainKind) -> Self {
        match kind {
            DomainKind::QuarterCircle => Self::quarter_circle(grid),
            DomainKind::Square => Self::full_square(grid),
        }
    }

    /// Discrete quarter-circle region.
    ///
    /// Nodes inside the region whose four neighbors are all inside are
    /// interior. Inside nodes with an outside neighbor form the discrete
    /// boundary, a one-node-thick seal, so no interior node touches an
    /// exterior node.
    pub fn quarter_circle(grid: Grid2D) -> Self {
        let n = grid.n();
        let inside = Array2::from_shape_fn(grid.shape(), |(i, j)| {
            in_quarter_circle(grid.coord(i), grid.coord(j))
        });
        let classes = Array2::from_shape_fn(grid.shape(), |(i, j)| {
            if !inside[[i, j]] {
                return NodeClass::Exterior;
            }
            // the region stays clear of the square's edge, so neighbors exist
            debug_assert!(i > 0 && j > 0 && i < n && j < n);
            let sealed = inside[[i - 1, j]] && inside[[i + 1, j]] && inside[[i, j - 1]] && inside[[i, j + 1]];
            if sealed {
                NodeClass::Interior
            } else {
                NodeClass::Boundary
            }
        });
        Self::from_classes(grid, DomainKind::QuarterCircle, classes)
    }

    /// Whole square: nodes `1..n-1` interior, the edges boundary.
    pub fn full_square(grid: Grid2D) -> Self {
        let n = grid.n();
        let classes = Array2::from_shape_fn(grid.shape(), |(i, j)| {
            if i == 0 || j == 0 || i == n || j == n {
                NodeClass::Boundary
            } else {
                NodeClass::Interior
            }
        });
        Self::from_classes(grid, DomainKind::Square, classes)
    }

    fn from_classes(grid: Grid2D, kind: DomainKind, classes: Array2<NodeClass>) -> Self {
        let interior_count = classes.iter().filter(|&&c| c == NodeClass::Interior).count();
        DomainMask {
            grid,
            kind,
            classes,
            interior_count,
        }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn class(&self, i: usize, j: usize) -> NodeClass {
        self.classes[[i, j]]
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        self.classes[[i, j]] == NodeClass::Interior
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn classes(&self) -> &Array2<NodeClass> {
        &self.classes
    }

    /// 8-bit rendering: 0 exterior, 128 boundary, 255 interior. Row 0 is the
    /// top edge `y = 1`.
    pub fn to_image(&self) -> crate::imaging::IntensityImage {
        let n = self.grid.n();
        let size = n + 1;
        let mut pixels = vec![0u8; size * size];
        for row in 0..size {
            for col in 0..size {
                pixels[row * size + col] = match self.classes[[col, n - row]] {
                    NodeClass::Exterior => 0,
                    NodeClass::Boundary => 128,
                    NodeClass::Interior => 255,
                };
            }
        }
        crate::imaging::IntensityImage::new(size, size, pixels).expect("sized buffer")
    }

    fn check_shape(&self, field: &Field) {
        assert_eq!(field.dim(), self.grid.shape(), "field does not match the grid");
    }

    /// Copies interior values and zeros every other node in place.
    pub fn zero_outside(&self, field: &mut Field) {
        self.check_shape(field);
        ndarray::Zip::from(field)
            .and(&self.classes)
            .for_each(|value, &class| {
                if class != NodeClass::Interior {
                    *value = 0.0;
                }
            });
    }
}

/// Embeds a field given on the region into the square, zero off the interior.
pub fn extend_by_zero(field: &Field, mask: &DomainMask) -> Field {
    let mut out = field.clone();
    mask.zero_outside(&mut out);
    out
}

/// Keeps interior values, forces the discrete boundary to the homogeneous
/// Dirichlet value and discards exterior values.
///
/// On the node-array representation this is the same projection as
/// [`extend_by_zero`]; the two names mark which side of the smoothing cycle
/// the projection sits on.
pub fn restrict_to_region(field: &Field, mask: &DomainMask) -> Field {
    let mut out = field.clone();
    mask.zero_outside(&mut out);
    out
}
