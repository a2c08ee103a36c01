//! Random flips and quarter turns applied jointly to an image and its mask.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::pipeline::dataset::Sample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    /// Quarter turns; square samples only.
    pub rot90: bool,
}

/// A concrete draw of the enabled transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl Augment {
    pub fn is_enabled(&self) -> bool {
        self.hflip || self.vflip || self.rot90
    }

    pub fn draw(&self, rng: &mut impl Rng, square: bool) -> Transform {
        Transform {
            hflip: self.hflip && rng.random_bool(0.5),
            vflip: self.vflip && rng.random_bool(0.5),
            quarter_turns: if self.rot90 && square {
                rng.random_range(0..4)
            } else {
                0
            },
        }
    }

    pub fn apply(&self, sample: &Sample, rng: &mut impl Rng) -> Sample {
        let shape = sample.image.shape();
        let square = shape[shape.len() - 1] == shape[shape.len() - 2];
        let t = self.draw(rng, square);
        Sample {
            id: sample.id.clone(),
            image: t.apply(&sample.image),
            mask: t.apply(&sample.mask),
        }
    }
}

impl Transform {
    /// Applies the transform to every plane of a `C×H×W` tensor.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let turns = self.quarter_turns % 4;
        let (ho, wo) = if turns % 2 == 1 { (w, h) } else { (h, w) };
        let src = x.data();
        Tensor::from_fn([c, ho, wo], |i| {
            let (ch, rest) = (i / (ho * wo), i % (ho * wo));
            let (mut y, mut xx) = (rest / wo, rest % wo);
            // Undo the rotation, then the flips, to find the source pixel.
            let (mut hh, mut ww) = (ho, wo);
            for _ in 0..turns {
                // Inverse of a counter-clockwise quarter turn.
                let (ny, nx) = (xx, hh - 1 - y);
                (y, xx) = (ny, nx);
                (hh, ww) = (ww, hh);
            }
            debug_assert_eq!((hh, ww), (h, w));
            if self.vflip {
                y = h - 1 - y;
            }
            if self.hflip {
                xx = w - 1 - xx;
            }
            src[(ch * h + y) * w + xx]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Tensor {
        Tensor::new([1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()
    }

    fn t(hflip: bool, vflip: bool, quarter_turns: u8) -> Transform {
        Transform {
            hflip,
            vflip,
            quarter_turns,
        }
    }

    #[test]
    fn flips() {
        assert_eq!(
            t(true, false, 0).apply(&grid()).data(),
            &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]
        );
        assert_eq!(
            t(false, true, 0).apply(&grid()).data(),
            &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let r = t(false, false, 1).apply(&grid());
        assert_eq!(r.shape(), &[1, 3, 2]);
        assert_eq!(r.data(), &[3.0, 6.0, 2.0, 5.0, 1.0, 4.0]);
        let full = t(false, false, 4).apply(&grid());
        assert_eq!(full.data(), grid().data());
        let twice = t(false, false, 1).apply(&t(false, false, 1).apply(&grid()));
        assert_eq!(twice.data(), t(true, true, 0).apply(&grid()).data());
    }
}
