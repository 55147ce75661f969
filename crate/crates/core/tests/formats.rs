//! Golden files in `tests/data` were written byte by byte from the documented
//! layouts, independently of this crate's encoders.

use std::path::PathBuf;

use ilvr_core::denoise::Architecture;
use ilvr_core::tensorio::{decode_pixmap, decode_tensor, encode_pixmap, encode_tensor, load_image, read_tensor};
use ilvr_core::{GaussianMixture, NeuralDenoiser, Tensor};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn golden(name: &str) -> Vec<u8> {
    std::fs::read(data(name)).unwrap()
}

#[test]
fn tensor_files_match_golden_bytes() {
    let cases = [
        ("tensor_2x3.ilvt", vec![2, 3], vec![0.0, 1.0, -1.5, 0.25, 3.0, -0.125]),
        ("tensor_1x2x2.ilvt", vec![1, 2, 2], vec![0.5, -0.5, 0.75, -1.0]),
    ];
    for (name, shape, values) in cases {
        let x = Tensor::from_shape_vec(shape, values).unwrap();
        assert_eq!(encode_tensor(&x), golden(name), "{name}");
        assert_eq!(decode_tensor(&golden(name)).unwrap(), x, "{name}");
        assert_eq!(read_tensor(&data(name)).unwrap(), x, "{name}");
    }
}

#[test]
fn tensor_header_is_little_endian() {
    let bytes = golden("tensor_2x3.ilvt");
    assert_eq!(&bytes[..8], b"ILVRTEN1");
    assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
    assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
    assert_eq!(&bytes[16..24], &[2, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(bytes.len(), 16 + 2 * 8 + 6 * 4);
}

#[test]
fn grayscale_pixmap_golden() {
    let x = load_image(&data("gray_3x2.pgm")).unwrap();
    assert_eq!(x.shape(), &[1, 2, 3]);
    let expect = [0u8, 128, 255, 64, 192, 1].map(|v| 2.0 * (v as f64 / 255.0) - 1.0);
    for (a, b) in x.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(encode_pixmap(&x).unwrap(), golden("gray_3x2.pgm"));
}

#[test]
fn color_pixmap_with_comment() {
    let x = decode_pixmap(&golden("color_2x1.ppm")).unwrap();
    assert_eq!(x.shape(), &[3, 1, 2]);
    // Interleaved RGB: red then blue.
    assert_eq!(x[[0, 0, 0]], 1.0);
    assert_eq!(x[[2, 0, 0]], -1.0);
    assert_eq!(x[[0, 0, 1]], -1.0);
    assert_eq!(x[[2, 0, 1]], 1.0);
    // Re-encoding drops the comment.
    assert_eq!(
        encode_pixmap(&x).unwrap(),
        b"P6\n2 1\n255\n\xff\x00\x00\x00\x00\xff".to_vec()
    );
}

#[test]
fn checkpoint_golden() {
    let arch = Architecture::Mlp {
        dim: 1,
        hidden: 1,
        embed: 2,
    };
    let params = vec![0.5, -1.0, 0.25, 2.0, -0.75, 1.5, 0.125, -2.0];
    let net = NeuralDenoiser::from_params(arch, params.clone()).unwrap();
    let mut bytes = Vec::new();
    net.write_checkpoint(&mut bytes).unwrap();
    assert_eq!(bytes, golden("mlp_1_1_2.ilvn"));

    let loaded = NeuralDenoiser::load(&data("mlp_1_1_2.ilvn")).unwrap();
    assert_eq!(loaded.architecture(), &arch);
    assert_eq!(loaded.params(), params.as_slice());
}

#[test]
fn mixture_json_golden() {
    let mix = GaussianMixture::load(&data("mixture_2d.json")).unwrap();
    assert_eq!(mix.weights(), &[0.25, 0.75]);
    assert_eq!(mix.means(), &[vec![0.0, 1.0], vec![2.0, 3.0]]);
    assert_eq!(mix.vars()[1], vec![0.5, 0.5]);
    assert_eq!(mix.shape(), &[2]);
}
