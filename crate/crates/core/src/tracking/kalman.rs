//! Constant-velocity Kalman filter over (cx, cy, aspect, height).
//!
//! Noise is scaled by the current box height, following the SORT/DeepSORT family.
//! Updates use the Joseph form and re-symmetrize, so the covariance stays symmetric
//! positive semi-definite in floating point.

use nalgebra::{SMatrix, SVector};

use crate::datamodel::mot::BBox;

pub type State = SVector<f64, 8>;
pub type Covariance = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;

const STD_POSITION: f64 = 1.0 / 20.0;
const STD_VELOCITY: f64 = 1.0 / 160.0;
const MIN_EXTENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBox {
    pub mean: State,
    pub covariance: Covariance,
}

fn xyah(b: &BBox) -> Measurement {
    let (cx, cy) = b.center();
    Measurement::new(cx, cy, b.w / b.h, b.h)
}

fn transition() -> Covariance {
    let mut f = Covariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> SMatrix<f64, 4, 8> {
    SMatrix::<f64, 4, 8>::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

fn symmetrize(p: &mut Covariance) {
    *p = (*p + p.transpose()) * 0.5;
}

impl KalmanBox {
    pub fn new(b: &BBox) -> Self {
        let z = xyah(b);
        let h = z[3];
        let mut mean = State::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let std = [
            2.0 * STD_POSITION * h,
            2.0 * STD_POSITION * h,
            1e-2,
            2.0 * STD_POSITION * h,
            10.0 * STD_VELOCITY * h,
            10.0 * STD_VELOCITY * h,
            1e-5,
            10.0 * STD_VELOCITY * h,
        ];
        KalmanBox {
            mean,
            covariance: Covariance::from_diagonal(&State::from_iterator(std.iter().map(|s| s * s))),
        }
    }

    pub fn predict(&mut self) {
        let h = self.mean[3];
        let std = [
            STD_POSITION * h,
            STD_POSITION * h,
            1e-2,
            STD_POSITION * h,
            STD_VELOCITY * h,
            STD_VELOCITY * h,
            1e-5,
            STD_VELOCITY * h,
        ];
        let q = Covariance::from_diagonal(&State::from_iterator(std.iter().map(|s| s * s)));
        let f = transition();
        self.mean = f * self.mean;
        self.covariance = f * self.covariance * f.transpose() + q;
        symmetrize(&mut self.covariance);
    }

    pub fn update(&mut self, b: &BBox) {
        let h = self.mean[3];
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&Measurement::from_iterator(
            [STD_POSITION * h, STD_POSITION * h, 1e-1, STD_POSITION * h]
                .iter()
                .map(|s| s * s),
        ));
        let hm = observation();
        let s = hm * self.covariance * hm.transpose() + r;
        let Some(s_inv) = s.try_inverse() else { return };
        let k = self.covariance * hm.transpose() * s_inv;
        let innovation = xyah(b) - hm * self.mean;
        self.mean += k * innovation;
        let ikh = Covariance::identity() - k * hm;
        self.covariance = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        symmetrize(&mut self.covariance);
        self.mean[2] = self.mean[2].max(MIN_EXTENT);
        self.mean[3] = self.mean[3].max(MIN_EXTENT);
    }

    pub fn bbox(&self) -> BBox {
        let h = self.mean[3].max(MIN_EXTENT);
        let w = self.mean[2].max(MIN_EXTENT) * h;
        BBox::from_center(self.mean[0], self.mean[1], w, h)
    }
}
