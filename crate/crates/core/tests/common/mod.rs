//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dstgen::render::GrayscaleImage;

// ---------------------------------------------------------------- rotations

/// `I + sin θ K + (1 − cos θ) K²` for the unit axis `k`.
pub fn rodrigues(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    #[rustfmt::skip]
    let kx = Matrix3::new(
        0.0, -k.z, k.y,
        k.z, 0.0, -k.x,
        -k.y, k.x, 0.0,
    );
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Uniform random unit vector by rejection from the cube.
pub fn random_axis(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    rodrigues(random_axis(rng), rng.random_range(0.0..std::f64::consts::PI))
}

/// Look-at rotation built from cross products: rows are the camera's right,
/// down and forward axes in world coordinates, then rolled about forward.
pub fn look_at_oracle(azimuth: f64, elevation: f64, theta: f64, distance: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let eye = Vector3::new(
        distance * elevation.cos() * azimuth.sin(),
        distance * elevation.sin(),
        distance * elevation.cos() * azimuth.cos(),
    );
    let forward = (-eye).normalize();
    let right = forward.cross(&Vector3::y()).normalize();
    let down = forward.cross(&right);
    let r0 = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let r = rodrigues(Vector3::z(), theta) * r0;
    (r, -(r * eye))
}

// ---------------------------------------------------------------- canny

/// Straightforward Canny written from the textbook description: separable
/// renormalized Gaussian, Sobel, atan2-binned non-maximum suppression with the
/// `≥ behind, > ahead` tie rule, and hysteresis by repeated relaxation.
pub fn canny_reference(img: &GrayscaleImage, low: f64, high: f64, sigma: f64) -> Vec<u8> {
    let (w, h) = (img.width as i64, img.height as i64);
    let at = |buf: &Vec<f64>, x: i64, y: i64| buf[(y * w + x) as usize];
    let src: Vec<f64> = img.pixels.iter().map(|&p| p as f64).collect();

    let blurred = if sigma == 0.0 {
        src
    } else {
        let radius = (3.0 * sigma).ceil() as i64;
        let weight = |k: i64| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp();
        let mut tmp = vec![0.0; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                let mut wsum = 0.0;
                for k in -radius..=radius {
                    let xx = x + k;
                    if xx >= 0 && xx < w {
                        sum += weight(k) * at(&src, xx, y);
                        wsum += weight(k);
                    }
                }
                tmp[(y * w + x) as usize] = sum / wsum;
            }
        }
        let mut out = vec![0.0; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                let mut wsum = 0.0;
                for k in -radius..=radius {
                    let yy = y + k;
                    if yy >= 0 && yy < h {
                        sum += weight(k) * at(&tmp, x, yy);
                        wsum += weight(k);
                    }
                }
                out[(y * w + x) as usize] = sum / wsum;
            }
        }
        out
    };

    let mut gx = vec![0.0; (w * h) as usize];
    let mut gy = vec![0.0; (w * h) as usize];
    let mut mag = vec![0.0; (w * h) as usize];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let b = |dx: i64, dy: i64| at(&blurred, x + dx, y + dy);
            let i = (y * w + x) as usize;
            gx[i] = (b(1, -1) + 2.0 * b(1, 0) + b(1, 1)) - (b(-1, -1) + 2.0 * b(-1, 0) + b(-1, 1));
            gy[i] = (b(-1, 1) + 2.0 * b(0, 1) + b(1, 1)) - (b(-1, -1) + 2.0 * b(0, -1) + b(1, -1));
            mag[i] = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
        }
    }

    let mut thin = vec![0.0; (w * h) as usize];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = (y * w + x) as usize;
            if mag[i] == 0.0 {
                continue;
            }
            let mut deg = gy[i].atan2(gx[i]).to_degrees();
            if deg < 0.0 {
                deg += 180.0;
            }
            if deg >= 180.0 {
                deg -= 180.0;
            }
            let (dx, dy) = if deg <= 22.5 || deg >= 157.5 {
                (1, 0)
            } else if deg < 67.5 {
                (1, 1)
            } else if deg <= 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let ahead = at(&mag, x + dx, y + dy);
            let behind = at(&mag, x - dx, y - dy);
            if mag[i] >= behind && mag[i] > ahead {
                thin[i] = mag[i];
            }
        }
    }

    let mut out = vec![0u8; (w * h) as usize];
    for i in 0..out.len() {
        if thin[i] > 0.0 && thin[i] >= high {
            out[i] = 255;
        }
    }
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                if out[i] == 255 || !(thin[i] > 0.0 && thin[i] >= low) {
                    continue;
                }
                let linked = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0 && ny >= 0 && nx < w && ny < h && out[(ny * w + nx) as usize] == 255
                    })
                });
                if linked {
                    out[i] = 255;
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

fn gray(w: u32, h: u32, f: impl Fn(u32, u32) -> f64) -> GrayscaleImage {
    let pixels = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y).round().clamp(0.0, 255.0) as u8);
    GrayscaleImage::from_raw(w, h, pixels.collect()).unwrap()
}

/// Named synthetic images, all at most 64×64.
pub fn canny_corpus() -> Vec<(String, GrayscaleImage)> {
    let mut out = Vec::new();
    for (i, at) in [17u32, 32, 45].into_iter().enumerate() {
        out.push((format!("vstep{i}"), gray(64, 64, |x, _| if x < at { 20.0 } else { 230.0 })));
    }
    out.push(("hstep".into(), gray(48, 64, |_, y| if y < 30 { 250.0 } else { 10.0 })));
    out.push(("diagstep".into(), gray(64, 64, |x, y| if x + y < 64 { 0.0 } else { 255.0 })));
    out.push(("ramp_x".into(), gray(64, 64, |x, _| x as f64 * 4.0)));
    out.push(("ramp_diag".into(), gray(64, 48, |x, y| (x + 2 * y) as f64 * 1.7)));
    out.push(("ramp_steep".into(), gray(40, 40, |x, _| (x as f64 - 20.0) * 40.0 + 128.0)));
    for (i, (cx, cy, r)) in [(32.0, 32.0, 20.0), (20.5, 40.2, 11.3), (31.7, 30.1, 6.0)].into_iter().enumerate() {
        out.push((
            format!("disk{i}"),
            gray(64, 64, move |x, y| {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                if d < r {
                    40.0
                } else {
                    210.0
                }
            }),
        ));
    }
    out.push((
        "rings".into(),
        gray(64, 64, |x, y| {
            let d = ((x as f64 - 31.5).powi(2) + (y as f64 - 31.5).powi(2)).sqrt();
            127.5 + 127.5 * (d / 3.0).sin()
        }),
    ));
    for (i, s) in [7u64, 8, 9].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let px: Vec<u8> = (0..64 * 64).map(|_| rng.random()).collect();
        out.push((format!("noise{i}"), GrayscaleImage::from_raw(64, 64, px).unwrap()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    out.push((
        "noisy_disk".into(),
        gray(64, 64, |x, y| {
            let d = ((x as f64 - 30.0).powi(2) + (y as f64 - 34.0).powi(2)).sqrt();
            if d < 18.0 {
                60.0
            } else {
                190.0
            }
        }),
    ));
    if let Some((_, img)) = out.last_mut() {
        for p in img.pixels.iter_mut() {
            *p = (*p as i32 + rng.random_range(-25..=25)).clamp(0, 255) as u8;
        }
    }
    out.push(("checker".into(), gray(60, 60, |x, y| if (x / 10 + y / 10) % 2 == 0 { 30.0 } else { 220.0 })));
    out.push((
        "rect".into(),
        gray(50, 40, |x, y| if (12..38).contains(&x) && (8..30).contains(&y) { 0.0 } else { 255.0 }),
    ));
    out.push(("constant".into(), gray(16, 16, |_, _| 77.0)));
    out.push(("tiny".into(), gray(3, 5, |x, y| ((x * 90 + y * 40) % 256) as f64)));
    out
}

// ---------------------------------------------------------------- ray casting

/// Möller–Trumbore; returns the ray parameter of the hit.
pub fn ray_triangle(orig: Vector3<f64>, dir: Vector3<f64>, tri: [Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = orig - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

/// Nearest triangle under the pixel center `(x + ½, y + ½)`, with camera-space
/// triangles and square pixels of focal length `f` around principal point `c`.
pub fn raycast_pixel(tris: &[[Vector3<f64>; 3]], f: f64, c: [f64; 2], x: u32, y: u32) -> Option<(usize, f64)> {
    let dir = Vector3::new((x as f64 + 0.5 - c[0]) / f, (y as f64 + 0.5 - c[1]) / f, 1.0);
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in tris.iter().enumerate() {
        if let Some(s) = ray_triangle(Vector3::zeros(), dir, *t) {
            if best.is_none_or(|(_, bs)| s < bs) {
                best = Some((i, s));
            }
        }
    }
    best
}

// ---------------------------------------------------------------- statistics

/// Two-sided one-sample Kolmogorov–Smirnov statistic against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value at significance 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------- meshes

/// Axis-aligned cube of side `side` centered at the origin, as 6 quads.
pub fn cube_obj(side: f64) -> String {
    let h = side / 2.0;
    let mut s = String::from("# cube\n");
    for &(x, y, z) in
        &[(-h, -h, -h), (h, -h, -h), (h, h, -h), (-h, h, -h), (-h, -h, h), (h, -h, h), (h, h, h), (-h, h, h)]
    {
        s.push_str(&format!("v {x} {y} {z}\n"));
    }
    s.push_str("f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 4 8 7 3\nf 1 5 8 4\nf 2 3 7 6\n");
    s
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(&p, text).unwrap();
    p
}

/// Mug-like prism with `n` sides plus a box handle, and a slab table; both
/// small enough to render quickly.
pub fn prism_obj(n: usize, radius: f64, height: f64) -> String {
    let mut s = String::new();
    for i in 0..n {
        let a = std::f64::consts::TAU * i as f64 / n as f64;
        s.push_str(&format!(
            "v {} 0 {}\nv {} {height} {}\n",
            radius * a.cos(),
            radius * a.sin(),
            radius * a.cos(),
            radius * a.sin()
        ));
    }
    for i in 0..n {
        let j = (i + 1) % n;
        s.push_str(&format!("f {} {} {} {}\n", 2 * i + 1, 2 * i + 2, 2 * j + 2, 2 * j + 1));
    }
    let bottom: Vec<String> = (0..n).rev().map(|i| (2 * i + 1).to_string()).collect();
    let top: Vec<String> = (0..n).map(|i| (2 * i + 2).to_string()).collect();
    s.push_str(&format!("f {}\nf {}\n", bottom.join(" "), top.join(" ")));
    s
}

pub fn slab_obj(w: f64, h: f64, d: f64) -> String {
    let mut s = String::new();
    for &(x, y, z) in
        &[(0., 0., 0.), (w, 0., 0.), (w, h, 0.), (0., h, 0.), (0., 0., d), (w, 0., d), (w, h, d), (0., h, d)]
    {
        s.push_str(&format!("v {x} {y} {z}\n"));
    }
    s.push_str("f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 4 8 7 3\nf 1 5 8 4\nf 2 3 7 6\n");
    s
}

/// Writes a 2-class × 3-model dataset config into `dir` and returns its path.
pub fn write_fixture_config(dir: &Path, images_per_class: u32, extra: &str) -> PathBuf {
    let mesh_dir = dir.join("meshes");
    for (i, (n, r, h)) in [(8usize, 0.4, 0.9), (10, 0.5, 0.8), (12, 0.35, 1.1)].into_iter().enumerate() {
        write_file(&mesh_dir, &format!("mug_{i}.obj"), &prism_obj(n, r, h));
    }
    for (i, (w, h, d)) in [(2.0, 0.5, 1.0), (1.5, 0.7, 1.5), (2.4, 0.3, 0.9)].into_iter().enumerate() {
        write_file(&mesh_dir, &format!("table_{i}.obj"), &slab_obj(w, h, d));
    }
    let text = format!(
        r#"dataset = "fixture"
mesh_root = "meshes"
output_dir = "out"
images_per_class = {images_per_class}
seed = 42
workers = 3

[camera]
image_width = 128
image_height = 128

[backend]
retries = 0
{extra}

[[classes]]
name = "coffee mug"
keywords = ["ceramic"]
models = [{{ path = "mug_0.obj" }}, {{ path = "mug_1.obj" }}, {{ path = "mug_2.obj" }}]

[[classes]]
name = "dining table"
models = [{{ path = "table_0.obj" }}, {{ path = "table_1.obj" }}, {{ path = "table_2.obj" }}]
"#
    );
    write_file(dir, "config.toml", &text)
}

// ---------------------------------------------------------------- http stub

#[derive(Debug, Clone)]
pub struct StubRequest {
    pub method: String,
    pub path: String,
    pub body: String,
}

/// Minimal HTTP/1.1 server answering each request with `handler(request)`.
pub struct StubServer {
    pub addr: SocketAddr,
    pub requests: Arc<Mutex<Vec<StubRequest>>>,
    pub hits: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&StubRequest) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let hits = Arc::new(AtomicUsize::new(0));
        let handler = Arc::new(handler);
        let (reqs, count) = (Arc::clone(&requests), Arc::clone(&hits));
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (handler, reqs, count) = (Arc::clone(&handler), Arc::clone(&reqs), Arc::clone(&count));
                thread::spawn(move || {
                    if let Some(req) = read_request(&stream) {
                        count.fetch_add(1, Ordering::SeqCst);
                        reqs.lock().unwrap().push(req.clone());
                        let (status, body) = handler(&req);
                        write_response(stream, status, &body);
                    }
                });
            }
        });
        Self { addr, requests, hits }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

fn read_request(stream: &TcpStream) -> Option<StubRequest> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(StubRequest { method, path, body: String::from_utf8_lossy(&body).into_owned() })
}

fn write_response(mut stream: TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

/// A local port with nothing listening on it.
pub fn dead_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}

// ---------------------------------------------------------------- records

/// An ok record built field by field, with the rotation taken from the viewpoint.
pub fn synthetic_record(
    class: &str,
    cad: &str,
    seq: u32,
    vp: dstgen::geometry::Viewpoint,
) -> dstgen::dataset::AnnotationRecord {
    use dstgen::dataset::{record_id, AnnotationRecord, ItemPaths, RecordStatus};
    let paths = ItemPaths::layout(class, cad, seq);
    AnnotationRecord {
        id: record_id(class, cad, seq),
        seq,
        image_path: Some(paths.image),
        edge_map_path: Some(paths.edge_map),
        class_name: class.to_string(),
        cad_source_id: cad.to_string(),
        viewpoint: vp,
        rotation: vp.to_extrinsics().rotation,
        intrinsics: dstgen::geometry::CameraIntrinsics::default(),
        visible_keypoints: Vec::new(),
        prompt: format!("a photo of {class}"),
        seed: u64::from(seq) * 7 + 1,
        generator_params: Default::default(),
        canny: Default::default(),
        status: RecordStatus::Ok,
    }
}
