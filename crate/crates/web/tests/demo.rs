use formctrl_web::demo;
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn mollification_distance_is_linear_in_delta() {
    let v = parse(demo::mollification_curve(0.8, -0.6, &[0.2, 0.1], "quintic").unwrap());
    let curves = v["curves"].as_array().unwrap();
    let d: Vec<f64> = curves.iter().map(|c| c["l1_distance"].as_f64().unwrap()).collect();
    assert!((d[0] / d[1] - 2.0).abs() < 1e-9);
    for c in curves {
        assert!((c["derivative_l1"].as_f64().unwrap() - 1.4).abs() < 1e-9);
        assert_eq!(c["values"].as_array().unwrap().len(), v["t"].as_array().unwrap().len());
    }
    assert!(demo::mollification_curve(0.0, 1.0, &[0.6], "quintic").is_err());
    assert!(demo::mollification_curve(0.0, 1.0, &[0.1], "cubic").is_err());
}

#[test]
fn populations_stay_normalized() {
    let v = parse(demo::populations("oscillator", 8, 0.7, 3.0, 30).unwrap());
    let rows = v["populations"].as_array().unwrap();
    assert_eq!(rows.len(), 31);
    assert_eq!(rows[0][0].as_f64().unwrap(), 1.0);
    for r in rows {
        let total: f64 = r.as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
    assert!(rows[30][1].as_f64().unwrap() > 1e-3);
}

#[test]
fn amplitude_is_clamped_into_the_box() {
    let v = parse(demo::populations("box", 6, 5.0, 1.0, 2).unwrap());
    assert_eq!(v["amplitude"].as_f64().unwrap(), 1.0);
    assert!(demo::populations("box", 1, 0.5, 1.0, 2).is_err());
    assert!(demo::populations("nope", 6, 0.5, 1.0, 2).is_err());
}

#[test]
fn compactness_profiles() {
    let v = parse(demo::compactness("box", 16).unwrap());
    let tail: Vec<f64> = v["interaction"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(tail.len(), 15);
    assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    let reference: Vec<f64> = v["reference"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(reference.iter().all(|&r| r >= 0.5));
}
