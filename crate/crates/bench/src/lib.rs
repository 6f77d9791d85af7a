//! Deterministic fixtures shared by the benchmarks.

use image::{Rgb, RgbImage};

use pestid_core::classes::Labels;
use pestid_core::classify::{Architecture, ConvNet, ConvNetClassifier, ReferenceCnn, TrainingData};
use pestid_core::roi::{geometry, PolygonAnnotation};

/// A `side x side` soil-coloured frame with one elliptical leaf and its
/// exact polygon.
pub fn leaf_frame(side: u32) -> (RgbImage, PolygonAnnotation) {
    let s = f64::from(side);
    let vertices: Vec<[f64; 2]> = (0..64)
        .map(|i| {
            let a = std::f64::consts::TAU * f64::from(i) / 64.0;
            [s * (0.5 + 0.32 * a.cos()), s * (0.5 + 0.22 * a.sin())]
        })
        .collect();
    let mask = geometry::rasterize(&vertices, side, side);
    let img = RgbImage::from_fn(side, side, |x, y| {
        let t = ((x * 31 + y * 17) % 23) as u8;
        if mask[(y * side + x) as usize] { Rgb([40 + t, 160 + t, 50]) } else { Rgb([110 + t, 90, 70 + t]) }
    });
    (img, PolygonAnnotation::human("leaf", "frame", vertices))
}

/// `n` truth/prediction pairs over `n_classes` classes with every fifth
/// prediction wrong.
pub fn label_pairs(n: usize, n_classes: usize) -> (Labels, Labels, Vec<String>) {
    let classes: Vec<String> = (0..n_classes).map(|k| format!("class{k:02}")).collect();
    let mut truth = Labels::new();
    let mut pred = Labels::new();
    for i in 0..n {
        let id = format!("s{i:06}");
        let k = (i * 7) % n_classes;
        let p = if i % 5 == 0 { (k + 1) % n_classes } else { k };
        truth.insert(id.clone(), classes[k].clone());
        pred.insert(id, classes[p].clone());
    }
    (truth, pred, classes)
}

/// Reference-architecture classifier with constant weights.
pub fn classifier(input_side: u32, n_classes: usize) -> ConvNetClassifier {
    let arch = Architecture {
        channels: ReferenceCnn::default().channels,
        n_classes,
    };
    ConvNetClassifier {
        net: ConvNet::constant(arch, 0.01),
        classes: (0..n_classes).map(|k| format!("class{k}")).collect(),
        input_side,
    }
}

/// `n` crops of side `side` spread over `n_classes` classes.
pub fn training_data(n: usize, side: u32, n_classes: usize) -> TrainingData {
    let samples = (0..n)
        .map(|i| {
            let k = i % n_classes;
            let img = RgbImage::from_fn(side, side, |x, y| {
                Rgb([(x * 8 + k as u32 * 40) as u8, (y * 8) as u8, ((i * 13) % 256) as u8])
            });
            (img, k)
        })
        .collect();
    TrainingData {
        samples,
        classes: (0..n_classes).map(|k| format!("class{k}")).collect(),
        scheme_hash: String::new(),
    }
}
