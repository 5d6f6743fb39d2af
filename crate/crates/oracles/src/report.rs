// oracle report types
