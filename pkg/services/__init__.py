"""Vehicle model, current fields, MPC and closed-loop simulation services."""
