pub use sigmoid_cox::selftest::random_state;
