// placeholder, implemented later
