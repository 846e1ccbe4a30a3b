fn main() {
    use num_bigfloat::BigFloat;
    let a = BigFloat::parse("123456789012345678901234567890123456789012345").unwrap();
    let b = BigFloat::from_f64(7.5);
    let c = a / b;
    println!("{}", c);
    println!("{}", BigFloat::from_f64(2.0).sqrt());
    println!("{}", BigFloat::from_f64(1.25).sin());
    println!("{}", BigFloat::from_f64(1.25).cosh());
    println!("{}", BigFloat::from_f64(-0.5).atan());
    println!("{}", BigFloat::from_f64(3.0).ln());
    println!("{}", BigFloat::from_f64(3.0).exp());
    println!("{:?}", BigFloat::from_f64(0.1).to_f64());
    println!("{}", num_bigfloat::PI);
    let z = BigFloat::from_f64(0.0);
    println!("zero cmp: {:?}", z.is_zero());
    println!("neg: {}", -BigFloat::from_f64(2.0));
    println!("abs: {}", BigFloat::from_f64(-2.0).abs());
    println!("cmp: {:?}", BigFloat::from_f64(1.0) > BigFloat::from_f64(0.5));
}
